"""Ground-truth evaluation, regret and violation metrics, and seed aggregation."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .mdp import (
    DENOMINATOR_FLOOR,
    DegenerateConditioningError,
    Policy,
    ProblemSpec,
    action_marginals,
    eqopt_conditionals,
    expected_reward_profile,
    forward_occupancy,
)

METRIC_COLUMNS = ("method", "lambda", "seed", "update_index", "episode_k", "return", "dp_violation", "eqopt_violation", "regret")


@dataclass(frozen=True)
class Violation:
    per_step: np.ndarray  # (H,)

    @property
    def mean(self) -> float:
        return float(self.per_step.mean())


@dataclass(frozen=True)
class EpisodeMetrics:
    episode: int
    reward_regret: float
    dp_violation: float
    eqopt_violation: float
    episodic_return: float
    dp_per_step: np.ndarray
    eqopt_per_step: np.ndarray


def _pairwise_max_gap(values: np.ndarray) -> np.ndarray:
    """``max_{i<j} |v_i - v_j|`` per column of a ``(q, H)`` array."""
    q, H = values.shape
    if q < 2:
        return np.zeros(H)
    gaps = [np.abs(values[i] - values[j]) for i, j in itertools.combinations(range(q), 2)]
    return np.max(gaps, axis=0)


def violation_dp(policy: Policy, truth: ProblemSpec) -> Violation:
    occ = forward_occupancy(policy, truth.kernel)
    return Violation(_pairwise_max_gap(action_marginals(occ)))


def violation_eqopt(policy: Policy, truth: ProblemSpec, floor: float = DENOMINATOR_FLOOR) -> Violation:
    occ = forward_occupancy(policy, truth.kernel)
    return Violation(_pairwise_max_gap(eqopt_conditionals(occ, floor)))


def episodic_return(policy: Policy, truth: ProblemSpec) -> float:
    """Population-weighted expected total reward over the horizon."""
    occ = forward_occupancy(policy, truth.kernel)
    return float(expected_reward_profile(occ, truth.reward, truth.groups).sum())


def reward_regret(policy: Policy, truth: ProblemSpec, comparator: Policy) -> float:
    """Per-step average reward shortfall against ``comparator``."""
    if policy is comparator:
        return 0.0
    return (episodic_return(comparator, truth) - episodic_return(policy, truth)) / truth.H


def evaluate(policy: Policy, truth: ProblemSpec, comparator: Policy, episode: int = 0) -> EpisodeMetrics:
    occ = forward_occupancy(policy, truth.kernel)
    ret = float(expected_reward_profile(occ, truth.reward, truth.groups).sum())
    dp = _pairwise_max_gap(action_marginals(occ))
    try:
        eo = _pairwise_max_gap(eqopt_conditionals(occ))
    except DegenerateConditioningError:
        eo = np.full(truth.H, np.nan)
    regret = (episodic_return(comparator, truth) - ret) / truth.H
    return EpisodeMetrics(episode, regret, float(dp.mean()), float(eo.mean()), ret, dp, eo)


# ---------------------------------------------------------------------------
# aggregation across seeds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Band:
    mean: np.ndarray
    sd: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    n: int

    def to_dict(self) -> dict:
        return {k: np.asarray(getattr(self, k)).tolist() for k in ("mean", "sd", "lower", "upper")} | {"n": self.n}


def band(series: Sequence[Sequence[float]]) -> Band:
    """Mean, sample sd, and ``mean +- 1.96 sd / sqrt(R)`` per checkpoint over ``R`` runs."""
    arr = np.asarray(series, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 2:
        raise ValueError("aggregation needs at least two runs of equal length")
    R = arr.shape[0]
    mean = arr.mean(axis=0)
    sd = arr.std(axis=0, ddof=1)
    half = 1.96 * sd / math.sqrt(R)
    return Band(mean, sd, mean - half, mean + half, R)


def pareto_front(points: Iterable[tuple[float, float]]) -> list[int]:
    """Indices of points not dominated in (lower violation, higher return)."""
    pts = list(points)
    keep = []
    for i, (vi, ri) in enumerate(pts):
        if not any(dominates(p, (vi, ri)) for j, p in enumerate(pts) if j != i):
            keep.append(i)
    return keep


def dominates(a: tuple[float, float], b: tuple[float, float]) -> bool:
    """``a`` is at least as good in both coordinates and strictly better in one."""
    (va, ra), (vb, rb) = a, b
    return va <= vb and ra >= rb and (va < vb or ra > rb)


def aggregate(rows: Sequence[dict]) -> dict:
    """Summarise metric rows (``METRIC_COLUMNS`` dicts) per method and lambda.

    Returns CI bands per metric over seeds and, per method, a Pareto point
    (mean final return, mean final step-average violation) for each fairness
    notion.
    """
    groups: dict[tuple[str, str], dict[int, dict[int, dict]]] = {}
    for r in rows:
        key = (str(r["method"]), str(r["lambda"]))
        groups.setdefault(key, {}).setdefault(int(r["seed"]), {})[int(r["episode_k"])] = r
    out = {"methods": [], "pareto": {"dp": [], "eqopt": []}}
    for (method, lam), by_seed in sorted(groups.items()):
        seeds = sorted(by_seed)
        ks = sorted(set.intersection(*(set(v) for v in by_seed.values())))
        entry = {"method": method, "lambda": lam, "seeds": seeds, "episode_k": ks, "bands": {}}
        for col in ("return", "dp_violation", "eqopt_violation", "regret"):
            series = [[float(by_seed[s][k][col]) for k in ks] for s in seeds]
            if len(seeds) >= 2:
                entry["bands"][col] = band(series).to_dict()
            else:
                entry["bands"][col] = {"mean": series[0], "sd": [0.0] * len(ks), "lower": series[0], "upper": series[0], "n": 1}
        out["methods"].append(entry)
        last = ks[-1]
        ret = float(np.mean([float(by_seed[s][last]["return"]) for s in seeds]))
        for note, col in (("dp", "dp_violation"), ("eqopt", "eqopt_violation")):
            vio = float(np.mean([float(by_seed[s][last][col]) for s in seeds]))
            out["pareto"][note].append({"method": method, "lambda": lam, "violation": vio, "return": ret})
    for note in ("dp", "eqopt"):
        pts = out["pareto"][note]
        front = set(pareto_front((p["violation"], p["return"]) for p in pts))
        for i, p in enumerate(pts):
            p["on_front"] = i in front
    return out
