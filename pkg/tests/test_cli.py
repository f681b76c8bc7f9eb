"""Command-line runs: verdicts, manifests and exit codes."""

import json
from pathlib import Path

import pytest

from bsdelab.cli import load_config, main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def test_girsanov_run(tmp_path):
    out = tmp_path / "out"
    cfg = write(tmp_path, {"command": "check-girsanov", "suite": {"instances": 20, "N_max": 8}})
    assert main(["run", cfg, "--out", str(out), "--seed", "3"]) == 0
    verdict = json.loads((out / "verdict.json").read_text())
    manifest = json.loads((out / "manifest.json").read_text())
    assert verdict["pass"] is True
    assert manifest["seed"] == 3
    assert len(manifest["config_hash"]) == 64
    assert "numpy" in manifest["versions"]


def test_config_hash_stable(tmp_path):
    cfg = write(tmp_path, {"command": "check-girsanov"})
    a, b = load_config(cfg), load_config(cfg)
    assert a == b
    assert load_config(cfg, seed=5).seed == 5


def test_malformed_config(tmp_path, capsys):
    assert main(["run", str(CONFIGS / "malformed.json"), "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "tree.N" in err and "colour" in err


def test_missing_file(tmp_path):
    assert main(["run", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2


def test_unknown_convection(tmp_path, capsys):
    cfg = write(tmp_path, {"command": "solve-pde", "coefficients": {"f": "kdv"}})
    assert main(["run", cfg, "--out", str(tmp_path)]) == 2
    assert "coefficients" in capsys.readouterr().err


def test_capacity_is_schema_error(tmp_path):
    cfg = write(tmp_path, {"command": "solve-cm", "tree": {"N": 25, "T": 0.1}})
    assert main(["run", cfg, "--out", str(tmp_path)]) == 2


def test_guard_exit_code(tmp_path):
    out = tmp_path / "out"
    cfg = write(tmp_path, {"command": "solve-pde", "tree": {"N": 4, "T": 0.1}, "pde": {"dx": 0.05, "dt": 0.01}})
    assert main(["run", cfg, "--out", str(out)]) == 3
    assert json.loads((out / "verdict.json").read_text())["error"] == "CFLError"


@pytest.mark.filterwarnings("ignore:solve_u beyond")
def test_convergence_failure_exit_code(tmp_path):
    out = tmp_path / "out"
    cfg = write(tmp_path, {"command": "solve-cm", "tree": {"N": 6, "T": 0.2},
                           "grid": {"x_min": 0, "x_max": 1, "G": 3}, "picard": {"max_iter": 2}})
    assert main(["run", cfg, "--out", str(out)]) == 1
    assert json.loads((out / "verdict.json").read_text())["error"] == "ConvergenceError"


def test_negative_seed_rejected(tmp_path):
    cfg = write(tmp_path, {"command": "check-girsanov"})
    with pytest.raises(SystemExit):
        main(["run", cfg, "--seed", "-1"])


@pytest.mark.slow
@pytest.mark.filterwarnings("ignore:solve_u beyond")
@pytest.mark.parametrize("name", ["solve_pde", "solve_cm", "chain_cm", "check_girsanov", "check_bsde_transform",
                                  "check_flow", "compare"])
def test_shipped_configs_pass(name, tmp_path):
    assert main(["run", str(CONFIGS / f"{name}.json"), "--out", str(tmp_path)]) == 0
