import csv
import json
import subprocess
import sys
import time

import jsonschema
import pytest

from hardylab import cli
from hardylab.config import from_dict, load
from hardylab.errors import ConfigError
from hardylab.report import schema

SINGLE = ["dimension=3", "poles=[[0,0,0]]", "default_r0=1.0"]
SMALL_MESH = ["mesh.L=2.0", "mesh.spacing=0.5", "mesh.base_layers=2", "mesh.layers_per_level=2"]
SMALL_EVOLVE = ["evolution.spacing=0.5", "evolution.base_layers=1", "evolution.layers_per_level=1",
                "evolution.T=0.05", "evolution.dt=0.005"]
FAST_K0 = ["k0.log2_samples=12", "k0.rounds=1", "k0.c_values=[0.25]"]
FAST_QUAD = ["quadrature.panels_per_axis=6", "quadrature.shells_per_pole=20"]


def _validate(report):
    jsonschema.validate(report, schema())


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_constants_three_dimensions(tmp_path):
    code, rep = cli.run("constants", out_dir=tmp_path)
    assert code == 0
    res = rep["sections"]["constants"]["results"]
    assert res["c_o"] == 0.25
    assert rep["verdicts"] == {"constants": "pass"}
    _validate(rep)
    assert json.loads((tmp_path / "constants.report.json").read_text()) == rep


def test_constants_four_dimensions(tmp_path):
    code, rep = cli.run("constants", overrides=["dimension=4", "poles=[[1,0,0,0],[-1,0,0,0]]"],
                        out_dir=tmp_path)
    assert code == 0
    assert rep["sections"]["constants"]["results"]["c_o"] == 1.0


def test_supercritical_verify_hardy_is_precondition_error(tmp_path):
    code, rep = cli.run("verify-hardy", overrides=["c=0.3", "method=ims_thm31"], out_dir=tmp_path)
    assert code == 2 and rep is None


def test_malformed_json_reports_line(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "dimension": 3,\n  "c": ,\n}\n')
    code, _ = cli.run("constants", config_path=path, out_dir=tmp_path, quiet=False)
    assert code == 2
    assert "line 3" in capsys.readouterr().err
    with pytest.raises(ConfigError, match="line 3"):
        load(path)


def test_unknown_field_is_rejected(tmp_path):
    with pytest.raises(ConfigError, match="weight.gama: unknown field"):
        load(overrides=["weight.gama=0.5"])
    assert cli.run("constants", overrides=["weight.gama=0.5"], out_dir=tmp_path)[0] == 2


def test_wrong_type_names_field():
    with pytest.raises(ConfigError, match="mesh.levels"):
        from_dict({"mesh": {"levels": "three"}})
    with pytest.raises(ConfigError, match="mesh.levels"):
        from_dict({"mesh": {"levels": 2}})
    with pytest.raises(ConfigError, match="method"):
        from_dict({"method": "other"})


def test_missing_config_file_exits_two(tmp_path):
    assert cli.run("constants", config_path=tmp_path / "none.json", out_dir=tmp_path)[0] == 2


def test_config_echo_round_trip(tmp_path):
    args = SINGLE + FAST_QUAD + ["method=vector_field_thm21"]
    code, first = cli.run("verify-hardy", overrides=args, out_dir=tmp_path / "a")
    assert code == 0
    path = tmp_path / "echo.json"
    path.write_text(json.dumps(first["config_echo"]))
    code, second = cli.run("verify-hardy", config_path=path, out_dir=tmp_path / "b")
    assert second["sections"] == first["sections"]
    assert second["config_echo"] == first["config_echo"]
    _validate(second)


def test_weight_check_weighted(tmp_path):
    args = ["weight.gamma=0.5", "weight.delta=1.0", "hypotheses.samples_log2=12"]
    code, rep = cli.run("weight-check", overrides=args, out_dir=tmp_path)
    _validate(rep)
    assert code == 0, rep["verdicts"]
    sec = rep["sections"]
    assert {"critical_exponent", "density_condition", "drift_inequality",
            "local_drift_inequality", "weight_constants"} <= set(sec)
    assert sec["critical_exponent"]["results"]["expected"] == 2.5


def test_partition_check(tmp_path):
    code, rep = cli.run("partition-check", overrides=FAST_K0, out_dir=tmp_path)
    _validate(rep)
    assert code == 0
    assert rep["sections"]["k0_c0.25"]["results"]["k0"]["k0"] < 9.8696044011


def test_lambda1_writes_csv(tmp_path):
    code, rep = cli.run("lambda1", overrides=SINGLE + SMALL_MESH + ["c=0.1"], out_dir=tmp_path)
    _validate(rep)
    assert code in (0, 1)
    rows = _rows(tmp_path / "lambda1_c0.1.csv")
    assert rows[0] == ["level", "layers", "dofs", "lambda1", "residual"]
    assert len(rows) == 4


def test_optimality_sweep_writes_csv(tmp_path):
    args = SINGLE + SMALL_MESH + ["spectrum.eps_list=[0.1,0.01]"]
    code, rep = cli.run("optimality-sweep", overrides=args, out_dir=tmp_path)
    _validate(rep)
    assert code in (0, 1, 3)
    assert _rows(tmp_path / "sweep_eps_c0.3.csv")[0] == ["epsilon", "quotient"]
    assert _rows(tmp_path / "sweep_levels_c0.3.csv")[0] == ["level", "layers", "lambda1"]


def test_evolve_writes_traces(tmp_path):
    code, rep = cli.run("evolve", overrides=SINGLE + SMALL_EVOLVE + ["c=0.1"], out_dir=tmp_path)
    _validate(rep)
    sec = rep["sections"]["evolution_c0.1"]
    assert "desk-scale proxy" in sec["note"]
    rows = _rows(tmp_path / "evolve_c0.1_level0.csv")
    assert rows[0] == ["t", "norm", "min_on_K"] and len(rows) == 12
    assert rep["exit_code"] == code


def test_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "hardylab.cli", "constants", "--out", str(tmp_path),
                           "--seed", "5", "--set", "dimension=4",
                           "--set", "poles=[[1,0,0,0],[-1,0,0,0]]"],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    rep = json.loads((tmp_path / "constants.report.json").read_text())
    assert rep["provenance"]["seed"] == 5
    assert rep["config_echo"]["dimension"] == 4
    assert "constants" in proc.stdout


@pytest.mark.slow
def test_full_audit_default_config(tmp_path):
    start = time.time()
    code, rep = cli.run("full-audit", out_dir=tmp_path)
    elapsed = time.time() - start
    _validate(rep)
    expected = {"critical_exponent", "density_condition", "partition", "constants",
                "inequality_ims_thm31", "inequality_vector_field_thm21",
                "inequality_vector_field_thm22", "lambda1", "optimality_sweep"}
    assert expected <= set(rep["sections"])
    assert any(k.startswith("evolution_c") for k in rep["sections"])
    assert elapsed <= 600
    assert code == 0, rep["verdicts"]
