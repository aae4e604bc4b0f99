"""Structured reports: JSON serialisation, atomic file writes, exit codes."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import asdict, is_dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__

REPORT_SCHEMA_VERSION = 1
PASS, FAIL, INCONCLUSIVE = "pass", "fail", "inconclusive"

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_INCONCLUSIVE = 0, 1, 2, 3


def to_jsonable(obj):
    """Plain JSON types; non-finite floats become the strings "inf", "-inf", "nan"."""
    if is_dataclass(obj) and not isinstance(obj, type):
        obj = obj.as_dict() if hasattr(obj, "as_dict") else asdict(obj)
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def atomic_write_text(path, text):
    """Write through a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, data):
    atomic_write_text(path, json.dumps(to_jsonable(data), indent=2, sort_keys=False) + "\n")


def write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    atomic_write_text(path, buf.getvalue())


def schema():
    return json.loads(resources.files("hardylab").joinpath("report.schema.json").read_text())


def section(verdict, results, tolerance, note=None):
    """One report section; ``tolerance`` documents the error budget behind the verdict."""
    out = {"verdict": verdict, "tolerance": tolerance, "results": results}
    if note:
        out["note"] = note
    return out


def exit_code(verdicts):
    values = list(verdicts.values())
    if FAIL in values:
        return EXIT_FAIL
    if INCONCLUSIVE in values:
        return EXIT_INCONCLUSIVE
    return EXIT_OK


def build_report(subcommand, config_echo, seed, sections, files=()):
    verdicts = {name: s["verdict"] for name, s in sections.items()}
    return to_jsonable({
        "schema_version": REPORT_SCHEMA_VERSION,
        "subcommand": subcommand,
        "provenance": {"artifact": "hardylab", "version": __version__, "seed": seed},
        "config_echo": config_echo,
        "sections": sections,
        "verdicts": verdicts,
        "exit_code": exit_code(verdicts),
        "files": list(files),
    })
