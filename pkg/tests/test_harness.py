import json
import re
from pathlib import Path

import pytest

from aput.errors import ConfigurationError
from aput.harness.cli import main
from aput.harness.config import ExperimentConfig
from aput.harness.sweep import CURVE_COLUMNS, run_put_sweep, sweep_seed
from aput.model import ObservationModel

TINY = dict(model_source="desk", lam=50.0, time_cost=1.0, forbidden_cost=500.0, episodes=60,
            eval_every=30, eval_episodes=40, hidden_sizes=[8], thresholds=[0.7, 0.8])


def write_config(tmp_path, **kw):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(dict(TINY, **kw)))
    return str(path)


# -- config ----------------------------------------------------------------------------

def test_unknown_key_is_named():
    with pytest.raises(ConfigurationError, match="'episode'"):
        ExperimentConfig.from_dict({"episode": 5})


@pytest.mark.parametrize("grid", [[], [0.8, 0.7], [0.7, 0.7]])
def test_threshold_grid_validation(grid):
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"thresholds": grid})


def test_type_checks():
    with pytest.raises(ConfigurationError, match="integer"):
        ExperimentConfig.from_dict({"episodes": "many"})
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"model_source": "file"})
    assert ExperimentConfig.from_dict({"lam": 10}).lam == 10.0


def test_seed_precedence(tmp_path, monkeypatch):
    path = write_config(tmp_path, seed=3)
    assert ExperimentConfig.load(path).seed == 3
    monkeypatch.setenv("APUT_SEED", "8")
    assert ExperimentConfig.load(path).seed == 8
    assert ExperimentConfig.load(path, seed=11).seed == 11


def test_default_grids_and_hash():
    assert ExperimentConfig().thresholds == [0.6, 0.7, 0.8, 0.9, 0.99]
    assert ExperimentConfig(privacy="mi").thresholds == [0.5, 1.0, 1.5, 2.0]
    a, b = ExperimentConfig(), ExperimentConfig(seed=1)
    assert a.config_hash() == ExperimentConfig().config_hash() != b.config_hash()
    assert re.fullmatch(r"config_hash=[0-9a-f]{16} seed=0", a.metadata())


def test_shipped_configs_load():
    root = Path(__file__).resolve().parent.parent / "configs"
    paths = sorted(root.glob("*.json"))
    assert paths
    for path in paths:
        ExperimentConfig.load(path)


# -- CLI -------------------------------------------------------------------------------

def test_cli_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"nope": 1}))
    assert main(["solve-dp", "--config", str(bad)]) == 2
    assert "nope" in capsys.readouterr().err
    assert main(["frobnicate"]) == 2
    assert main(["check-model", str(tmp_path / "missing.json")]) == 2


def test_cli_model_pipeline(tmp_path, capsys):
    model_path = tmp_path / "m.json"
    assert main(["gen-model", "--n-obs", "6", "--seed", "2", "--out", str(model_path)]) == 0
    assert ObservationModel.load(model_path).n_obs == 6
    assert main(["check-model", str(model_path)]) == 0
    assert "identifiable" in capsys.readouterr().out.lower()
    csv_path = tmp_path / "r.csv"
    csv_path.write_text("action,reading,secret,useful\n0,0.1,a,x\n0,0.9,a,y\n0,0.2,b,x\n0,0.8,b,y\n")
    assert main(["fit-model", str(csv_path), "--n-obs", "2", "--out", str(tmp_path / "f.json")]) == 0


def test_cli_dp_train_evaluate(tmp_path, capsys):
    cfg = write_config(tmp_path)
    table = tmp_path / "v.json"
    assert main(["solve-dp", "--config", cfg, "--threshold", "0.75", "--out", str(table)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["value_at_prior"] == pytest.approx(9.25, abs=1e-6)
    assert summary["certificate_ok"]
    assert main(["evaluate", "--config", cfg, "--threshold", "0.75", "--policy", str(table),
                 "--episodes", "50", "--trace", str(tmp_path / "t.csv")]) == 0
    metrics = json.loads(capsys.readouterr().out)
    assert metrics["mean_tau"] == 1.0
    assert (tmp_path / "t.csv").read_text().startswith("episode,")
    pol = tmp_path / "pol.json"
    assert main(["train", "--config", cfg, "--out", str(pol)]) == 0
    assert (tmp_path / "pol_log.csv").exists()
    assert main(["evaluate", "--config", cfg, "--policy", str(pol), "--episodes", "20"]) == 0
    assert main(["evaluate", "--config", cfg, "--policy", "stop", "--episodes", "20"]) == 0


def test_cli_mi_oracle(tmp_path, capsys):
    assert main(["mi-oracle", "--config", write_config(tmp_path), "--horizon", "2"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["trajectory_mi"] == pytest.approx(out["chain_rule_mi"], abs=1e-8)


def test_cli_size_and_numeric_exit_codes(tmp_path, monkeypatch):
    cfg = write_config(tmp_path, model_source="synthetic", n_obs=4)
    # 3 x 3 exceeds the lattice solver's size limit: a configuration problem, exit 2
    assert main(["solve-dp", "--config", cfg]) == 2
    from aput.errors import ConvergenceError
    from aput.harness import cli

    def stuck(*args, **kwargs):
        raise ConvergenceError("no", 1.0)

    monkeypatch.setattr(cli, "value_iteration", stuck)
    assert main(["solve-dp", "--config", write_config(tmp_path)]) == 3


# -- sweep -----------------------------------------------------------------------------

def test_sweep_seeds_are_distinct():
    assert len({sweep_seed(5, i) for i in range(10)}) == 10


def test_sweep_writes_files(tmp_path):
    cfg = ExperimentConfig.from_dict(TINY)
    curve = run_put_sweep(cfg, tmp_path)
    names = {p.name for p in tmp_path.iterdir()}
    assert {"put_curve.csv", "breakdown.csv", "put_curve.svg", "training_log_0.csv",
            "training_log_1.csv"} <= names
    lines = (tmp_path / "put_curve.csv").read_text().splitlines()
    assert lines[0] == ",".join(CURVE_COLUMNS)
    assert len(lines) == 1 + 2 * 2 + 1 and lines[-1] == f"# {cfg.metadata()}"
    header = (tmp_path / "breakdown.csv").read_text().splitlines()[0].split(",")
    assert header.count("acc_u_0") == 1 and "acc_s_1" in header and "acc_s_2" not in header
    svg = (tmp_path / "put_curve.svg").read_text()
    assert 'viewBox="0 0 800 500"' in svg and 'id="legend_1"' in svg
    # self-contained: the only URIs are the two namespace declarations
    assert sorted(re.findall(r'"(https?://[^"]*)"', svg)) == ["http://www.w3.org/1999/xlink",
                                                            "http://www.w3.org/2000/svg"]
    assert curve.complete and curve.best_gap()[0] in (0.7, 0.8)


def test_sweep_is_byte_identical(tmp_path):
    cfg = ExperimentConfig.from_dict(dict(TINY, thresholds=[0.8]))
    run_put_sweep(cfg, tmp_path / "a")
    run_put_sweep(cfg, tmp_path / "b")
    for name in ("put_curve.csv", "breakdown.csv", "training_log_0.csv", "put_curve.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_vacuous_threshold_never_violates(tmp_path):
    cfg = ExperimentConfig.from_dict(dict(TINY, model_source="synthetic", n_obs=10,
                                          thresholds=[1.0], eval_episodes=200))
    curve = run_put_sweep(cfg, tmp_path)
    assert all(p.metrics.violation_rate == 0 for p in curve.points)


def test_sweep_writes_partial_results_on_divergence(tmp_path, monkeypatch):
    from aput.harness import sweep
    from aput.errors import TrainingDivergedError
    real = sweep.train
    calls = []

    def flaky(env, cfg):
        calls.append(1)
        if len(calls) == 2:
            raise TrainingDivergedError("boom", {})
        return real(env, cfg)

    monkeypatch.setattr(sweep, "train", flaky)
    with pytest.raises(TrainingDivergedError):
        run_put_sweep(ExperimentConfig.from_dict(TINY), tmp_path)
    lines = (tmp_path / "put_curve.csv").read_text().splitlines()
    assert len(lines) == 1 + 2 + 1
