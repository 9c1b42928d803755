import csv
import json
from dataclasses import replace

import pytest

from fairrl import harness
from fairrl.harness import ExperimentConfig, run_experiment
from fairrl.metrics import METRIC_COLUMNS


def _cfg(tmp_path, **kw):
    base = dict(
        methods=("unconstrained", "penalty-DP"),
        lambdas=(1.0,),
        l_min=3,
        l_max=5,
        seeds=(0, 1),
        eval_episodes=5,
        restarts=2,
        comparator_restarts=2,
        out=str(tmp_path / "run"),
    )
    base.update(kw)
    return ExperimentConfig(**base)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_single_checkpoint_gives_one_row(tmp_path):
    cfg = _cfg(tmp_path, methods=("unconstrained",), l_max=3, seeds=(0,), plots=False)
    rows = _rows(run_experiment(cfg)["metrics"])
    assert len(rows) == 1
    assert rows[0]["episode_k"] == "8" and rows[0]["update_index"] == "1"
    assert tuple(rows[0]) == METRIC_COLUMNS


def test_profiles():
    paper = ExperimentConfig.from_dict({"profile": "paper"})
    assert len(paper.checkpoints) == 16 and paper.checkpoints[-1] == 262144
    assert paper.eval_episodes == 8000 and len(paper.seeds) == 5
    desk = ExperimentConfig.from_dict({"profile": "desk", "seeds": [7]})
    assert desk.checkpoints == [2**l for l in range(3, 13)] and desk.seeds == (7,)
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"profile": "huge"})


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(methods=("magic",))
    with pytest.raises(ValueError):
        ExperimentConfig(seeds=())
    with pytest.raises(ValueError):
        ExperimentConfig(l_min=5, l_max=4)


def test_runs_expand_penalty_weights():
    cfg = ExperimentConfig(methods=("constrained-DP", "penalty-EqOpt"), lambdas=(0.1, 10))
    assert cfg.runs() == [("constrained-DP", None), ("penalty-EqOpt", 0.1), ("penalty-EqOpt", 10.0)]


def test_same_seed_same_bytes_different_seed_different_rows(tmp_path):
    a = run_experiment(_cfg(tmp_path / "a", plots=False))["metrics"].read_bytes()
    b = run_experiment(_cfg(tmp_path / "b", plots=False))["metrics"].read_bytes()
    assert a == b
    rows = _rows(run_experiment(_cfg(tmp_path / "c", plots=False))["metrics"])
    by_seed = {s: [r["return"] for r in rows if r["seed"] == s and r["method"] == "penalty-DP"] for s in ("0", "1")}
    assert by_seed["0"] != by_seed["1"]


def test_thread_count_does_not_change_outputs(tmp_path):
    one = run_experiment(_cfg(tmp_path / "one", threads=1, plots=False))
    four = run_experiment(_cfg(tmp_path / "four", threads=4, plots=False))
    for name in ("metrics", "diagnostics"):
        assert one[name].read_bytes() == four[name].read_bytes()


def test_artifacts(tmp_path):
    cfg = _cfg(tmp_path, snapshots=True)
    paths = run_experiment(cfg)
    out = tmp_path / "run"
    summary = json.loads(paths["summary"].read_text())
    assert {m["method"] for m in summary["methods"]} == {"unconstrained", "penalty-DP"}
    assert set(summary["comparators"]) == {"DP"}
    diag = _rows(paths["diagnostics"])
    assert len(diag) == 2 * 2 * 3 and {d["status"] for d in diag} == {"feasible"}
    policies = json.loads(paths["policies"].read_text())
    assert "penalty-DP|1.0|1" in policies
    assert sorted(p.name for p in (out / "plots").iterdir()) == [
        "pareto_dp.svg", "pareto_eqopt.svg", "training_dp_violation.svg",
        "training_eqopt_violation.svg", "training_regret.svg", "training_return.svg",
    ]
    assert any((out / "snapshots").glob("model_penalty-DP_1.0_seed0_k16.json"))
    assert list((out / "cache").glob("comparator_DP_*.json"))
    # no temporary files survive
    assert not [p for p in out.rglob("*") if p.name.startswith(".") or p.suffix == ".tmp"]


def test_comparator_is_cached(tmp_path, synthetic, monkeypatch):
    first = harness.comparator(synthetic, "DP", 2, tmp_path)
    monkeypatch.setattr(harness, "solve", lambda *a, **k: pytest.fail("cache not used"))
    again = harness.comparator(synthetic, "DP", 2, tmp_path)
    assert first.accept.tobytes() == again.accept.tobytes()


def test_constrained_run_records_relaxation(tmp_path):
    cfg = _cfg(tmp_path, methods=("constrained-EqOpt",), seeds=(0,), l_max=4, plots=False)
    diag = _rows(run_experiment(cfg)["diagnostics"])
    assert [d["episode_k"] for d in diag] == ["8", "16"]
    assert all(0 < float(d["d_hat"]) <= 1 for d in diag)
    assert [float(d["eta"]) for d in diag] == [0.4, 16 ** (-1 / 3)]


def test_horizon_mismatch(tmp_path, synthetic):
    with pytest.raises(ValueError):
        run_experiment(replace(_cfg(tmp_path), horizon=4), synthetic)
