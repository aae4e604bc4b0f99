"""Run configuration: JSON file plus dotted ``key=value`` overrides.

Every field has a default; unknown keys and wrongly typed values are
rejected with the dotted path of the offending field.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import List, Optional

from .errors import ConfigError
from .geometry import PoleConfiguration, build_configuration
from .weights import WeightSpec, family

SCHEMA_VERSION = 1


@dataclass
class WeightConfig:
    gamma: float = 0.0
    delta: float = 0.0
    m: float = 2.0
    # None: k1 is fitted by the audit; k2 None: -gamma
    k1: Optional[float] = None
    k2: Optional[float] = None


@dataclass
class QuadratureConfig:
    panels_per_axis: int = 12
    shells_per_pole: int = 40
    r_min_ratio: float = 1e-6
    face_panels: int = 2


@dataclass
class MeshConfig:
    L: float = 2.0
    spacing: float = 0.25
    base_layers: int = 8
    layers_per_level: int = 8
    levels: int = 3


@dataclass
class SpectrumConfig:
    stable_factor: float = 0.8
    sweep_factor: float = 1.2
    eps_list: List[float] = field(default_factory=lambda: [1e-1, 1e-2, 1e-3, 1e-4])
    threshold: float = -100.0
    tol: float = 1e-6


@dataclass
class EvolutionConfig:
    T: float = 0.1
    dt: Optional[float] = None
    levels: int = 3
    L: float = 2.0
    spacing: float = 0.25
    base_layers: int = 4
    layers_per_level: int = 4
    c_factors: List[float] = field(default_factory=lambda: [0.5, 2.0])


@dataclass
class HypothesisConfig:
    eps_list: List[float] = field(default_factory=lambda: [1.0, 0.1, 0.01])
    samples_log2: int = 15
    density_p: float = 2.0
    box_half_width: Optional[float] = None


@dataclass
class K0Config:
    c_values: List[float] = field(default_factory=lambda: [0.1, 0.25, 1.0])
    log2_samples: int = 20
    rounds: int = 3


@dataclass
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    dimension: int = 3
    poles: List[List[float]] = field(default_factory=lambda: [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
    default_r0: Optional[float] = None
    weight: WeightConfig = field(default_factory=WeightConfig)
    c: Optional[float] = None
    method: str = "ims_thm31"
    box_half_width: Optional[float] = None
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)
    mesh: MeshConfig = field(default_factory=MeshConfig)
    spectrum: SpectrumConfig = field(default_factory=SpectrumConfig)
    evolution: EvolutionConfig = field(default_factory=EvolutionConfig)
    hypotheses: HypothesisConfig = field(default_factory=HypothesisConfig)
    k0: K0Config = field(default_factory=K0Config)
    seed: int = 0
    output_dir: str = "out"

    def to_dict(self):
        return asdict(self)

    def pole_configuration(self) -> PoleConfiguration:
        return build_configuration(self.poles, self.dimension, self.default_r0)

    def weight_spec(self, config: Optional[PoleConfiguration] = None, k1: float = 0.0) -> WeightSpec:
        cfg = config or self.pole_configuration()
        w = self.weight
        k2 = "auto" if w.k2 is None else w.k2
        return family(cfg, w.gamma, w.delta, w.m, k1 if w.k1 is None else w.k1, k2)


_METHODS = ("vector_field_thm21", "vector_field_thm22", "ims_thm31")


def _coerce(value, annotation, path):
    """Check/convert a JSON value against a (string) type annotation."""
    ann = str(annotation)
    optional = ann.startswith("Optional[")
    if optional:
        if value is None:
            return None
        ann = ann[len("Optional["):-1]
    if value is None:
        raise ConfigError(f"{path}: null is not allowed")
    if ann == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if ann == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if ann == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if ann == "List[float]":
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list of numbers")
        return [_coerce(v, "float", f"{path}[{i}]") for i, v in enumerate(value)]
    if ann == "List[List[float]]":
        if not isinstance(value, list) or not value:
            raise ConfigError(f"{path}: expected a nonempty list of points")
        return [_coerce(v, "List[float]", f"{path}[{i}]") for i, v in enumerate(value)]
    raise ConfigError(f"{path}: unsupported field type {ann}")


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    obj = cls()
    known = {f.name: f for f in fields(cls)}
    for key, value in data.items():
        sub = f"{path}.{key}" if path else key
        if key not in known:
            raise ConfigError(f"{sub}: unknown field")
        f = known[key]
        default = getattr(obj, key)
        if is_dataclass(default):
            setattr(obj, key, _build(type(default), value, sub))
        else:
            setattr(obj, key, _coerce(value, f.type, sub))
    return obj


def validate(cfg: RunConfig) -> RunConfig:
    if cfg.schema_version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: expected {SCHEMA_VERSION}")
    if cfg.method not in _METHODS:
        raise ConfigError(f"method: must be one of {', '.join(_METHODS)}")
    if any(len(p) != cfg.dimension for p in cfg.poles):
        raise ConfigError("poles: every pole needs `dimension` coordinates")
    if cfg.mesh.levels < 3:
        raise ConfigError("mesh.levels: at least three levels are needed")
    if cfg.evolution.levels < 2:
        raise ConfigError("evolution.levels: at least two levels are needed")
    if cfg.evolution.T <= 0:
        raise ConfigError("evolution.T: must be positive")
    return cfg


def from_dict(data) -> RunConfig:
    return validate(_build(RunConfig, data, ""))


def load(path=None, overrides=()) -> RunConfig:
    data = {}
    if path is not None:
        text = Path(path).read_text()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    data = copy.deepcopy(data)
    for item in overrides:
        apply_override(data, item)
    return from_dict(data)


def apply_override(data, item):
    """Apply ``a.b.c=value``; the value is parsed as JSON, else kept as a string."""
    if "=" not in item:
        raise ConfigError(f"--set {item!r}: expected key=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = key.strip().split(".")
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set {key}: {p} is not an object")
    node[parts[-1]] = value
