import csv
import json

import pytest

from gwlab import ConfigInvalid
from gwlab.cli import main
from gwlab.experiments import EXPERIMENTS, default_config, load_config, phi_rule, run


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


# --- config validation -----------------------------------------------------

def test_phi_rules():
    assert phi_rule({"exponent": 0.3})(2**10) == 8
    assert phi_rule({"fraction": 0.25})(4096) == 1024
    assert phi_rule({"table": {"100": 7}})(100) == 7
    with pytest.raises(ConfigInvalid):
        phi_rule({"table": {"100": 7}})(101)
    with pytest.raises(ConfigInvalid):
        phi_rule({"power": 2})


def test_phi_at_least_n_rejected():
    with pytest.raises(ConfigInvalid):
        load_config({"experiment": "thm1", "schedule": [64, 128], "phi": {"table": {"64": 64, "128": 8}}})
    with pytest.raises(ConfigInvalid):
        load_config({"experiment": "thm1", "schedule": [64], "phi": {"exponent": 1.0}})


@pytest.mark.parametrize("patch", [
    {"schedule": [128, 64]},
    {"schedule": [64, 64]},
    {"tolerances": {"final": -0.1}},
    {"tolerances": {"final": 0}},
    {"x_grid": [0.0]},
    {"j_range": [0, 3]},
    {"law": {"family": "stable_frac", "alpha": 0.5, "c": 0.9}},
    {"colour": "blue"},
])
def test_invalid_configs(patch):
    cfg = {"experiment": "thm2", **patch}
    with pytest.raises(ConfigInvalid):
        load_config(cfg)


def test_unknown_experiment():
    with pytest.raises(ConfigInvalid):
        load_config({"experiment": "thm9"})


def test_defaults_are_valid():
    for exp in EXPERIMENTS:
        cfg = load_config(default_config(exp))
        assert cfg.experiment == exp
        assert len(cfg.hash) == 16


def test_hash_tracks_config():
    a = load_config({"experiment": "stationarity"})
    b = load_config({"experiment": "stationarity", "seed": 5})
    assert a.hash == load_config({"experiment": "stationarity"}).hash
    assert a.hash != b.hash


# --- running ---------------------------------------------------------------

def test_stationarity_run_outputs(tmp_path):
    rep = run({"experiment": "stationarity"}, out_dir=tmp_path)
    assert rep.passed and rep.exit_code == 0
    lines = (tmp_path / "stationarity.csv").read_text().splitlines()
    assert lines[0] == rep.header_line()
    assert lines[0].startswith(f"# config_hash={rep.config.hash}")
    rows = list(csv.DictReader(lines[1:]))
    assert {int(r["j"]) for r in rows if r["label"] == "stationarity"} == set(range(1, 11))
    for r in rows:
        assert r["predicted"] and r["observed"] and r["predicted_source"] and r["observed_source"]
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["experiments"]["stationarity"]["config_hash"] == rep.config.hash
    assert summary["passed"] is True


def test_run_is_deterministic(tmp_path):
    run({"experiment": "finite_variance", "schedule": [2**10, 2**12]}, out_dir=tmp_path / "a")
    run({"experiment": "finite_variance", "schedule": [2**10, 2**12]}, out_dir=tmp_path / "b")
    assert (tmp_path / "a" / "finite_variance.csv").read_text() == (tmp_path / "b" / "finite_variance.csv").read_text()


def test_mc_run_is_deterministic(tmp_path):
    cfg = {"experiment": "mc_crosscheck", "schedule": [64], "phi": {"table": {"64": 8}},
           "options": {"replicates": 20000}}
    a = run(cfg, seed=3)
    b = run(cfg, seed=3)
    assert [r["observed"] for r in a.rows] == [r["observed"] for r in b.rows]
    assert a.config.seed == 3


def test_summary_accumulates(tmp_path):
    run({"experiment": "stationarity"}, out_dir=tmp_path)
    run({"experiment": "finite_variance", "schedule": [2**10]}, out_dir=tmp_path)
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert set(summary["experiments"]) == {"stationarity", "finite_variance"}


# --- command line ----------------------------------------------------------

def test_cli_run_pass(tmp_path, capsys):
    cfg = write(tmp_path, {"experiment": "stationarity", "schedule": [2**10, 2**12]})
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert "stationarity: PASS" in capsys.readouterr().out
    assert (tmp_path / "o" / "stationarity.csv").exists()


def test_cli_tolerance_failure_exit_two(tmp_path):
    cfg = write(tmp_path, {"experiment": "stationarity", "schedule": [2**10],
                           "tolerances": {"residual": 1e-12, "p0": 1e-12}})
    assert main(["run", "--config", str(cfg), "--quiet"]) == 2


def test_cli_error_exit_one(tmp_path, capsys):
    cfg = write(tmp_path, {"experiment": "thm1", "schedule": [16], "phi": {"fraction": 1.0}})
    assert main(["run", "--config", str(cfg)]) == 1
    assert "ConfigInvalid" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["run", "--config", str(bad)]) == 1


def test_cli_verify_with_overrides(tmp_path, capsys):
    code = main(["verify", "finite_variance", "--schedule", "1024", "4096",
                 "--option", "local_exponent=0.25", "--out", str(tmp_path)])
    assert code == 0
    text = (tmp_path / "finite_variance.csv").read_text()
    assert "local_j=6" in text and "local_j=8" in text  # ceil(n^0.25) for n = 1024, 4096
    assert main(["verify", "stationarity", "--option", "broken"]) == 1


def test_cli_config_subcommand(capsys):
    assert main(["config", "thm1"]) == 0
    cfg = json.loads(capsys.readouterr().out)
    assert cfg["experiment"] == "thm1"
    assert cfg["phi"] == {"exponent": 0.3}


def test_cli_seed_override(tmp_path):
    cfg = write(tmp_path, {"experiment": "stationarity", "schedule": [2**10], "seed": 1})
    main(["run", "--config", str(cfg), "--seed", "42", "--out", str(tmp_path / "o"), "--quiet"])
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["experiments"]["stationarity"]["seed"] == 42


def test_config_out_directory(tmp_path):
    cfg = write(tmp_path, {"experiment": "stationarity", "schedule": [2**10], "out": str(tmp_path / "from_cfg")})
    assert main(["run", "--config", str(cfg), "--quiet"]) == 0
    assert (tmp_path / "from_cfg" / "stationarity.csv").exists()
