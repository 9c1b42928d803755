"""Episodic learning loop, baselines, evaluation, and run artifacts."""
from __future__ import annotations

import concurrent.futures as cf
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import rng
from .datagen import GeneratorConfig, build
from .envsim import sample_episodes
from .estimation import CountTable, build_model, schedule, snapshot, update_counts
from .fileio import atomic_write_csv, atomic_write_json
from .mdp import DegenerateConditioningError, Policy, ProblemSpec
from .metrics import METRIC_COLUMNS, aggregate, evaluate
from .plots import render_all
from .solver import Evaluator, SolveProblem, SolverOptions, solve

log = logging.getLogger(__name__)

METHODS = {
    "constrained-DP": "DP",
    "constrained-EqOpt": "EqOpt",
    "penalty-DP": "DP-penalty",
    "penalty-EqOpt": "EqOpt-penalty",
    "unconstrained": "None",
}

DIAGNOSTIC_COLUMNS = (
    "method", "lambda", "seed", "update_index", "episode_k", "status", "eta", "c_hat", "d_hat",
    "estimated_dp_violation", "estimated_eqopt_violation", "estimated_objective", "mc_return",
    "mc_return_se", "cumulative_regret",
)

PROFILES = {
    "desk": {"l_min": 3, "l_max": 12, "eval_episodes": 2000, "seeds": [0, 1, 2, 3, 4]},
    "paper": {"l_min": 3, "l_max": 18, "eval_episodes": 8000, "seeds": [0, 1, 2, 3, 4]},
}


@dataclass(frozen=True)
class ExperimentConfig:
    instance: dict | str = field(default_factory=lambda: {"variant": "synthetic"})
    methods: tuple[str, ...] = ("constrained-DP", "constrained-EqOpt", "penalty-DP", "penalty-EqOpt", "unconstrained")
    lambdas: tuple[float, ...] = (0.1, 1.0, 10.0, 100.0)
    horizon: int = 8
    l_min: int = 3
    l_max: int = 12
    n_per_group: int | tuple[int, ...] = 4
    eval_episodes: int = 2000
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    delta: float = 0.1
    survival: float | None = None
    restarts: int = 8
    comparator_restarts: int = 32
    threads: int = 1
    out: str = "runs/experiment"
    plots: bool = True
    snapshots: bool = False

    def __post_init__(self):
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}; choose from {sorted(METHODS)}")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.l_min < 0 or self.l_max < self.l_min:
            raise ValueError("checkpoint exponents must satisfy 0 <= l_min <= l_max")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if any(lam < 0 for lam in self.lambdas):
            raise ValueError("penalty weights must be non-negative")

    @property
    def checkpoints(self) -> list[int]:
        return [2**l for l in range(self.l_min, self.l_max + 1)]

    def runs(self) -> list[tuple[str, float | None]]:
        out = []
        for m in self.methods:
            if m.startswith("penalty"):
                out.extend((m, float(lam)) for lam in self.lambdas)
            else:
                out.append((m, None))
        return out

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "ExperimentConfig":
        doc = dict(doc)
        profile = doc.pop("profile", None)
        base: dict[str, Any] = {}
        if profile is not None:
            if profile not in PROFILES:
                raise ValueError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
            base.update(PROFILES[profile])
        base.update(doc)
        for k in ("methods", "lambdas", "seeds"):
            if k in base:
                base[k] = tuple(base[k])
        if isinstance(base.get("n_per_group"), list):
            base["n_per_group"] = tuple(base["n_per_group"])
        return cls(**base)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def load_instance(source: dict | str, horizon: int | None = None) -> ProblemSpec:
    """Build from a generator config dict, or load a problem JSON file."""
    if isinstance(source, (str, Path)):
        spec = ProblemSpec.load(source)
        if horizon is not None and spec.H != horizon:
            raise ValueError(f"instance horizon {spec.H} differs from configured horizon {horizon}")
        return spec
    doc = dict(source)
    if horizon is not None:
        doc.setdefault("horizon", horizon)
    return build(GeneratorConfig.from_dict(doc))


# ---------------------------------------------------------------------------
# comparator: best known constrained optimum on the true model
# ---------------------------------------------------------------------------


def _spec_digest(spec: ProblemSpec) -> str:
    return hashlib.sha256(json.dumps(spec.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def comparator(spec: ProblemSpec, kind: str, restarts: int = 32, cache_dir: str | Path | None = None) -> Policy:
    """True-model optimum under exact stepwise parity (zero slack, no policy box)."""
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"comparator_{kind}_{_spec_digest(spec)}_{restarts}.json"
        if path.is_file():
            return Policy.from_dict(json.loads(path.read_text())["policy"], spec.groups.group_ids)
    opts = SolverOptions(restarts=restarts, seed=0)
    res = solve(SolveProblem.from_spec(spec, kind, bound=0.0, eta=0.0, options=opts))
    if not res.feasible:
        log.warning("comparator for %s is only best-effort (violation %.2e)", kind, res.max_violation)
    if path is not None:
        atomic_write_json(path, {
            "kind": kind, "objective": res.objective, "max_violation": res.max_violation,
            "status": res.status, "policy": res.policy.to_dict(spec.groups.group_ids),
        })
    return res.policy


# ---------------------------------------------------------------------------
# one (seed, method, lambda) learning run
# ---------------------------------------------------------------------------


def _fmt(v: float | None) -> str:
    if v is None:
        return ""
    return repr(float(v))


def _mc_return(spec: ProblemSpec, policy: Policy, episodes: int, n: int | tuple, seed: int) -> tuple[float, float]:
    """Monte-Carlo estimate of the population return and its standard error."""
    if episodes <= 0:
        return math.nan, math.nan
    batch = sample_episodes(spec, policy, 1, episodes, n, seed)
    means, ses = [], []
    for r in batch.rollouts:
        tot = r.rewards.sum(axis=1)
        means.append(tot.mean())
        ses.append(tot.std(ddof=1) / math.sqrt(tot.size) if tot.size > 1 else 0.0)
    w = spec.groups.proportions
    return float(w @ np.array(means)), float(math.sqrt(np.sum((w * np.array(ses)) ** 2)))


def _estimated_violations(problem: SolveProblem, policy: Policy) -> tuple[float, float]:
    ev = Evaluator(problem)
    e = ev(np.asarray(policy.accept))
    q = problem.q
    if q < 2:
        return 0.0, 0.0
    dp = float(np.abs(ev.gaps(e, "DP")).reshape(-1, problem.horizon).max(axis=0).mean())
    with np.errstate(divide="ignore", invalid="ignore"):
        eo = np.abs(ev.gaps(e, "EqOpt")).reshape(-1, problem.horizon).max(axis=0).mean()
    return dp, float(eo)


def run_single(
    spec: ProblemSpec,
    cfg: ExperimentConfig,
    seed: int,
    method: str,
    lam: float | None,
    comparators: dict[str, Policy],
    snapshot_dir: Path | None = None,
) -> dict:
    """Learning loop for one (seed, method, penalty) triple."""
    kind = METHODS[method]
    q, H, X, S = spec.q, spec.H, spec.X, spec.S
    counts = CountTable.empty(q, S)
    policy = Policy.constant(q, H, X, 0.5)
    next_episode = 1
    cmp_kind = "EqOpt" if "EqOpt" in kind else "DP"
    cmp_policy = comparators[cmp_kind]
    eval_seed = rng.seed_sequence(seed, 2)[1]
    rows, diags = [], []
    cum_regret = 0.0
    prev_regret = None
    prev_k = 1
    for idx, k in enumerate(cfg.checkpoints, start=1):
        if k > next_episode:
            batch = sample_episodes(spec, policy, next_episode, k - next_episode, cfg.n_per_group, seed, cfg.survival)
            counts = update_counts(counts, batch)
            # pre-checkpoint episodes ran the previous policy
            if prev_regret is not None:
                cum_regret += prev_regret * (k - prev_k)
            next_episode = k
        model = build_model(counts, k, cfg.delta, H)
        sch = schedule(model, cfg.delta, H)
        bound = sch.d_hat if kind == "EqOpt" else sch.c_hat
        opts = SolverOptions(restarts=cfg.restarts, seed=seed * 1_000_003 + idx)
        problem = SolveProblem.from_estimate(
            model, spec.groups.proportions, H, kind, bound=bound, eta=sch.eta, lam=lam or 0.0, options=opts
        )
        try:
            res = solve(problem)
        except DegenerateConditioningError:
            problem = problem.with_(bound=1.0)
            res = solve(problem)
        policy = res.policy
        m = evaluate(policy, spec, cmp_policy, k)
        est_dp, est_eo = _estimated_violations(problem, policy)
        mc, mc_se = _mc_return(spec, policy, cfg.eval_episodes, cfg.n_per_group, eval_seed + idx)
        prev_regret, prev_k = m.reward_regret, k
        rows.append([method, _fmt(lam), seed, idx, k, _fmt(m.episodic_return), _fmt(m.dp_violation),
                     _fmt(m.eqopt_violation), _fmt(m.reward_regret)])
        diags.append([method, _fmt(lam), seed, idx, k, res.status, _fmt(sch.eta), _fmt(sch.c_hat[0]),
                      _fmt(sch.d_hat[0]), _fmt(est_dp), _fmt(est_eo), _fmt(res.objective), _fmt(mc),
                      _fmt(mc_se), _fmt(cum_regret)])
        if snapshot_dir is not None:
            tag = f"{method}_{_fmt(lam) or 'none'}_seed{seed}_k{k}"
            atomic_write_json(snapshot_dir / f"model_{tag}.json", snapshot(model, counts, sch, spec.groups.group_ids))
    return {
        "rows": rows,
        "diagnostics": diags,
        "policy": policy.to_dict(spec.groups.group_ids),
        "key": (method, _fmt(lam), seed),
    }


def run_experiment(cfg: ExperimentConfig, spec: ProblemSpec | None = None) -> dict[str, Path]:
    """Run every (seed, method, penalty) combination and write the artifacts.

    Jobs run on ``cfg.threads`` worker threads; every job owns its counts and
    random streams, and output rows are sorted, so the files do not depend on
    scheduling.
    """
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = spec or load_instance(cfg.instance, cfg.horizon)
    if spec.H != cfg.horizon:
        raise ValueError(f"instance horizon {spec.H} differs from configured horizon {cfg.horizon}")
    atomic_write_json(out / "instance.json", spec.to_dict())
    atomic_write_json(out / "config.json", cfg.to_dict())
    kinds_needed = {"EqOpt" if "EqOpt" in METHODS[m] else "DP" for m in cfg.methods}
    cmps = {k: comparator(spec, k, cfg.comparator_restarts, out / "cache") for k in sorted(kinds_needed)}
    snap = out / "snapshots" if cfg.snapshots else None
    if snap is not None:
        snap.mkdir(exist_ok=True)
    jobs = [(seed, m, lam) for seed in cfg.seeds for m, lam in cfg.runs()]
    results = []
    if cfg.threads <= 1 or len(jobs) == 1:
        for seed, m, lam in jobs:
            results.append(run_single(spec, cfg, seed, m, lam, cmps, snap))
    else:
        with cf.ThreadPoolExecutor(cfg.threads) as ex:
            futs = [ex.submit(run_single, spec, cfg, seed, m, lam, cmps, snap) for seed, m, lam in jobs]
            results = [f.result() for f in futs]
    order = {(m, _fmt(lam)): i for i, (m, lam) in enumerate(cfg.runs())}
    results.sort(key=lambda r: (order[r["key"][:2]], r["key"][2]))
    rows = [row for r in results for row in r["rows"]]
    diags = [row for r in results for row in r["diagnostics"]]
    paths = {"metrics": out / "metrics.csv", "diagnostics": out / "diagnostics.csv", "summary": out / "summary.json"}
    atomic_write_csv(paths["metrics"], METRIC_COLUMNS, rows)
    atomic_write_csv(paths["diagnostics"], DIAGNOSTIC_COLUMNS, diags)
    dict_rows = [dict(zip(METRIC_COLUMNS, r)) for r in rows]
    summary = aggregate(dict_rows)
    summary["comparators"] = {k: p.to_dict(spec.groups.group_ids) for k, p in cmps.items()}
    atomic_write_json(paths["summary"], summary)
    policies = {f"{r['key'][0]}|{r['key'][1]}|{r['key'][2]}": r["policy"] for r in results}
    atomic_write_json(out / "final_policies.json", policies)
    paths["policies"] = out / "final_policies.json"
    if cfg.plots:
        for p in render_all(paths["metrics"], out / "plots", summary):
            paths[p.stem] = p
    return paths
