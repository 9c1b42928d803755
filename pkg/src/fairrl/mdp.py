"""Finite-horizon, group-contingent binary-decision MDPs.

States are pairs ``(x, y)`` of an observable feature ``x`` and a hidden
qualification ``y``; the canonical flat index is ``s = 2 * x + y``. Actions are
``{0, 1}`` (reject / accept). Every table is dense and indexed ``(s, a)``
row-major. Policies only see ``x``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import kernels

A = 2
DENOMINATOR_FLOOR = 1e-9
RENORMALIZE_TOL = 1e-9
REWARD_FAMILIES = ("deterministic", "bernoulli")


class ShapeError(ValueError):
    """Array dimensions disagree with the state/action/group spaces."""


class DegenerateConditioningError(ValueError):
    """Conditioning event has (numerically) zero probability."""

    def __init__(self, message: str, denominator: float):
        super().__init__(f"{message} (denominator={denominator:.3e})")
        self.denominator = denominator


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def _stochastic(p: np.ndarray, what: str) -> np.ndarray:
    """Validate rows summing to one; renormalise tiny deviations."""
    p = np.array(p, dtype=np.float64)
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        bad = np.argwhere(~(p >= 0))[0]
        raise ValueError(f"{what}: negative or non-finite entry at {tuple(int(i) for i in bad)}")
    sums = p.sum(axis=-1)
    dev = np.abs(sums - 1.0)
    if np.any(dev > RENORMALIZE_TOL):
        bad = np.argwhere(dev > RENORMALIZE_TOL)[0]
        raise ValueError(
            f"{what}: row {tuple(int(i) for i in bad)} sums to {sums[tuple(bad)]:.12g}, not 1"
        )
    # rows already stochastic to rounding are left bit-exact so save/load round-trips
    fix = dev > 1e-14
    p[fix] = p[fix] / sums[fix][..., None]
    return p


@dataclass(frozen=True)
class StateSpace:
    feature_count: int
    horizon: int

    def __post_init__(self):
        if self.feature_count < 1:
            raise ValueError("feature_count must be >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")

    @property
    def state_count(self) -> int:
        return 2 * self.feature_count

    @staticmethod
    def index(x: int, y: int) -> int:
        return 2 * x + y

    @staticmethod
    def decompose(s: int) -> tuple[int, int]:
        return divmod(s, 2)


@dataclass(frozen=True)
class GroupSpec:
    group_ids: tuple[str, ...]
    proportions: np.ndarray

    def __post_init__(self):
        ids = tuple(str(g) for g in self.group_ids)
        if len(ids) < 1 or len(set(ids)) != len(ids):
            raise ValueError("group ids must be unique and non-empty")
        p = np.array(self.proportions, dtype=np.float64)
        if p.shape != (len(ids),):
            raise ShapeError(f"proportions shape {p.shape} != ({len(ids)},)")
        if np.any(p < 0):
            raise ValueError("group proportions must be non-negative")
        if abs(p.sum() - 1.0) > RENORMALIZE_TOL:
            raise ValueError(f"group proportions sum to {p.sum():.12g}, not 1")
        object.__setattr__(self, "group_ids", ids)
        object.__setattr__(self, "proportions", _frozen(p / p.sum()))

    @property
    def count(self) -> int:
        return len(self.group_ids)

    def index(self, group: str | int) -> int:
        if isinstance(group, (int, np.integer)):
            if not 0 <= group < self.count:
                raise KeyError(group)
            return int(group)
        return self.group_ids.index(str(group))


@dataclass(frozen=True)
class TransitionKernel:
    """Per-group time-invariant kernel ``probs[g, s, a, s']`` and initial law ``initial[g, s]``."""

    probs: np.ndarray
    initial: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        initial = np.asarray(self.initial, dtype=np.float64)
        if probs.ndim != 4 or probs.shape[2] != A or probs.shape[1] != probs.shape[3]:
            raise ShapeError(f"kernel must have shape (q, S, 2, S), got {probs.shape}")
        if initial.shape != (probs.shape[0], probs.shape[1]):
            raise ShapeError(f"initial shape {initial.shape} != {(probs.shape[0], probs.shape[1])}")
        object.__setattr__(self, "probs", _frozen(_stochastic(probs, "kernel")))
        object.__setattr__(self, "initial", _frozen(_stochastic(initial, "initial distribution")))

    @property
    def state_count(self) -> int:
        return self.probs.shape[1]


@dataclass(frozen=True)
class RewardModel:
    """Mean reward table ``mean[g, s, a]`` plus a sampling family.

    ``bounds`` records the raw ``[l, u]`` range the means were normalised from,
    if any. ``bernoulli`` rewards require means in [0, 1].
    """

    mean: np.ndarray
    family: str = "deterministic"
    bounds: tuple[float, float] | None = None

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        if mean.ndim != 3 or mean.shape[2] != A:
            raise ShapeError(f"reward mean must have shape (q, S, 2), got {mean.shape}")
        if self.family not in REWARD_FAMILIES:
            raise ValueError(f"unknown reward family {self.family!r}")
        if np.any(mean < -1e-12) or np.any(mean > 1 + 1e-12):
            raise ValueError("normalised reward means must lie in [0, 1]")
        object.__setattr__(self, "mean", _frozen(np.clip(mean, 0.0, 1.0)))

    @property
    def family_code(self) -> int:
        return kernels.REWARD_BERNOULLI if self.family == "bernoulli" else kernels.REWARD_DETERMINISTIC

    def raw(self) -> np.ndarray:
        """Means mapped back to the raw ``[l, u]`` scale."""
        if self.bounds is None:
            return np.array(self.mean)
        lo, hi = self.bounds
        return lo + (hi - lo) * self.mean


@dataclass(frozen=True)
class ProblemSpec:
    """Ground truth of one environment: spaces, groups, kernel, rewards."""

    space: StateSpace
    groups: GroupSpec
    kernel: TransitionKernel
    reward: RewardModel
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        q, S = self.groups.count, self.space.state_count
        if self.kernel.probs.shape[:2] != (q, S):
            raise ShapeError(f"kernel shape {self.kernel.probs.shape} inconsistent with q={q}, S={S}")
        if self.reward.mean.shape != (q, S, A):
            raise ShapeError(f"reward shape {self.reward.mean.shape} != {(q, S, A)}")

    @property
    def S(self) -> int:
        return self.space.state_count

    @property
    def X(self) -> int:
        return self.space.feature_count

    @property
    def H(self) -> int:
        return self.space.horizon

    @property
    def q(self) -> int:
        return self.groups.count

    # -- serialisation -----------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        doc = {
            "features": self.X,
            "horizon": self.H,
            "state_index": "s = 2*x + y; rows ordered (s, a)",
            "reward_family": self.reward.family,
            "groups": [
                {
                    "id": gid,
                    "proportion": float(self.groups.proportions[g]),
                    "initial": self.kernel.initial[g].tolist(),
                    "kernel": self.kernel.probs[g].reshape(self.S * A, self.S).tolist(),
                    "reward_mean": self.reward.mean[g].tolist(),
                }
                for g, gid in enumerate(self.groups.group_ids)
            ],
        }
        if self.reward.bounds is not None:
            doc["reward_bounds"] = list(self.reward.bounds)
        if self.meta:
            doc["meta"] = self.meta
        return doc

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "ProblemSpec":
        X, H = int(doc["features"]), int(doc["horizon"])
        space = StateSpace(X, H)
        S = space.state_count
        gs = doc["groups"]
        kernel = np.array([g["kernel"] for g in gs], dtype=np.float64)
        if kernel.shape[1:] != (S * A, S):
            raise ShapeError(f"kernel rows must be {S * A} x {S}, got {kernel.shape[1:]}")
        bounds = doc.get("reward_bounds")
        return cls(
            space=space,
            groups=GroupSpec(tuple(g["id"] for g in gs), np.array([g["proportion"] for g in gs])),
            kernel=TransitionKernel(kernel.reshape(len(gs), S, A, S), np.array([g["initial"] for g in gs])),
            reward=RewardModel(
                np.array([g["reward_mean"] for g in gs]),
                family=doc.get("reward_family", "deterministic"),
                bounds=tuple(bounds) if bounds is not None else None,
            ),
            meta=dict(doc.get("meta", {})),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "ProblemSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class Policy:
    """Acceptance probabilities ``accept[g, h, x] = pi^g_h(a=1 | x)``."""

    accept: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.accept, dtype=np.float64)
        if a.ndim != 3:
            raise ShapeError(f"policy must have shape (q, H, X), got {a.shape}")
        if np.any(a < 0) or np.any(a > 1) or not np.all(np.isfinite(a)):
            raise ValueError("policy entries must lie in [0, 1]")
        object.__setattr__(self, "accept", _frozen(a))

    @classmethod
    def constant(cls, q: int, H: int, X: int, value: float) -> "Policy":
        return cls(np.full((q, H, X), float(value)))

    @classmethod
    def all_accept(cls, q: int, H: int, X: int) -> "Policy":
        return cls.constant(q, H, X, 1.0)

    def min_action_prob(self) -> float:
        return float(min(self.accept.min(), (1.0 - self.accept).min()))

    def in_box(self, eta: float) -> bool:
        """Membership in the reachability class: both actions have prob >= eta."""
        return self.min_action_prob() >= eta - 1e-15

    def to_dict(self, group_ids: Sequence[str]) -> dict[str, Any]:
        return {
            str(gid): {
                str(h + 1): {str(x): float(v) for x, v in enumerate(self.accept[g, h])}
                for h in range(self.accept.shape[1])
            }
            for g, gid in enumerate(group_ids)
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any], group_ids: Sequence[str]) -> "Policy":
        rows = []
        for gid in group_ids:
            steps = doc[str(gid)]
            rows.append(
                [
                    [steps[h][x] for x in sorted(steps[h], key=int)]
                    for h in sorted(steps, key=int)
                ]
            )
        return cls(np.array(rows, dtype=np.float64))


@dataclass(frozen=True)
class OccupancyMeasure:
    """``rho[g, h, s, a]`` with ``s = 2x + y``; see :meth:`xyah` for the (x, y, a, h) view."""

    rho: np.ndarray

    def xyah(self, group: int) -> np.ndarray:
        H, S, _ = self.rho.shape[1:]
        return self.rho[group].reshape(H, S // 2, 2, A).transpose(1, 2, 3, 0)

    @property
    def horizon(self) -> int:
        return self.rho.shape[1]


@dataclass(frozen=True)
class ValueFunctions:
    Q: np.ndarray  # (q, H, S, A)
    V: np.ndarray  # (q, H + 1, S); V[:, H] = 0


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def _check_policy(policy: Policy, kernel: TransitionKernel) -> None:
    q, S = kernel.probs.shape[:2]
    if policy.accept.shape[0] != q or 2 * policy.accept.shape[2] != S:
        raise ShapeError(
            f"policy shape {policy.accept.shape} inconsistent with kernel (q={q}, S={S})"
        )


def forward_occupancy(policy: Policy, kernel: TransitionKernel) -> OccupancyMeasure:
    _check_policy(policy, kernel)
    rho = np.stack(
        [
            kernels.forward(policy.accept[g], kernel.probs[g], kernel.initial[g])[0]
            for g in range(kernel.probs.shape[0])
        ]
    )
    return OccupancyMeasure(_frozen(rho))


def value_functions(policy: Policy, kernel: TransitionKernel, reward: RewardModel | np.ndarray) -> ValueFunctions:
    """Backward recursion ``Q = r + P V_{h+1}``, ``V = E_pi Q``, with ``V_{H+1} = 0``."""
    _check_policy(policy, kernel)
    r = reward.mean if isinstance(reward, RewardModel) else np.asarray(reward, dtype=np.float64)
    q, S = kernel.probs.shape[:2]
    if r.shape != (q, S, A):
        raise ShapeError(f"reward shape {r.shape} != {(q, S, A)}")
    H = policy.accept.shape[1]
    Q = np.zeros((q, H, S, A))
    V = np.zeros((q, H + 1, S))
    p1 = np.repeat(policy.accept, 2, axis=2)
    for g in range(q):
        for h in range(H - 1, -1, -1):
            Q[g, h] = r[g] + kernel.probs[g] @ V[g, h + 1]
            V[g, h] = (1.0 - p1[g, h]) * Q[g, h, :, 0] + p1[g, h] * Q[g, h, :, 1]
    return ValueFunctions(_frozen(Q), _frozen(V))


def expected_reward_profile(occ: OccupancyMeasure, reward: RewardModel | np.ndarray, groups: GroupSpec) -> np.ndarray:
    """Population expected reward at each step, ``R_h = sum_g p_g E[r_g(s_h, a_h)]``."""
    r = reward.mean if isinstance(reward, RewardModel) else np.asarray(reward, dtype=np.float64)
    if r.shape[0] != occ.rho.shape[0] or r.shape[1:] != occ.rho.shape[2:]:
        raise ShapeError(f"reward shape {r.shape} inconsistent with occupancy {occ.rho.shape}")
    per_group = np.einsum("ghsa,gsa->gh", occ.rho, r)
    return groups.proportions @ per_group


def _group_step(occ: OccupancyMeasure, group: int, h: int) -> np.ndarray:
    H = occ.horizon
    if not 1 <= h <= H:
        raise ShapeError(f"step {h} outside 1..{H}")
    return occ.rho[group, h - 1]


def action_marginal(occ: OccupancyMeasure, group: int, h: int) -> float:
    """P(a_h = 1) for ``group`` at (1-based) step ``h``."""
    rho = _group_step(occ, group, h)
    acc = np.ascontiguousarray(rho[:, 1]).sum()
    tot = np.ascontiguousarray(rho[:, 0] + rho[:, 1]).sum()
    return float(acc / tot)


def eqopt_conditional(occ: OccupancyMeasure, group: int, h: int, floor: float = DENOMINATOR_FLOOR) -> float:
    """P(a_h = 1 | y_h = 1) for ``group`` at (1-based) step ``h``."""
    rho = _group_step(occ, group, h)
    qual = rho[1::2]
    num = np.ascontiguousarray(qual[:, 1]).sum()
    den = np.ascontiguousarray(qual[:, 0] + qual[:, 1]).sum()
    if den <= floor:
        raise DegenerateConditioningError(f"P(y_{h}=1) below floor for group {group}", float(den))
    return float(num / den)


def action_marginals(occ: OccupancyMeasure) -> np.ndarray:
    """All marginals, shape (q, H)."""
    q, H = occ.rho.shape[:2]
    return np.array([[action_marginal(occ, g, h + 1) for h in range(H)] for g in range(q)])


def eqopt_conditionals(occ: OccupancyMeasure, floor: float = DENOMINATOR_FLOOR) -> np.ndarray:
    q, H = occ.rho.shape[:2]
    return np.array([[eqopt_conditional(occ, g, h + 1, floor) for h in range(H)] for g in range(q)])


# ---------------------------------------------------------------------------
# validation report
# ---------------------------------------------------------------------------


def kernel_report(doc: dict[str, Any]) -> dict[str, Any]:
    """Structural check on a raw JSON problem document.

    Unlike :meth:`ProblemSpec.from_dict` this never raises on bad numbers; it
    lists every offending row so a CLI can report them.
    """
    X, H = int(doc["features"]), int(doc["horizon"])
    S = 2 * X
    problems: list[str] = []
    min_entry: dict[str, float] = {}
    zeros: dict[str, int] = {}
    prop = [float(g.get("proportion", 0.0)) for g in doc["groups"]]
    if abs(sum(prop) - 1.0) > RENORMALIZE_TOL:
        problems.append(f"group proportions sum to {sum(prop):.12g}")
    for g in doc["groups"]:
        gid = str(g["id"])
        k = np.array(g["kernel"], dtype=np.float64)
        if k.shape != (S * A, S):
            problems.append(f"group {gid}: kernel shape {k.shape} != {(S * A, S)}")
            continue
        for row in range(S * A):
            tot = k[row].sum()
            if np.any(k[row] < 0) or abs(tot - 1.0) > RENORMALIZE_TOL:
                s, a = divmod(row, A)
                problems.append(f"group {gid}: row (s={s}, a={a}) sums to {tot:.12g}")
        init = np.array(g["initial"], dtype=np.float64)
        if init.shape != (S,) or np.any(init < 0) or abs(init.sum() - 1.0) > RENORMALIZE_TOL:
            problems.append(f"group {gid}: initial distribution invalid")
        r = np.array(g["reward_mean"], dtype=np.float64)
        if r.shape != (S, A):
            problems.append(f"group {gid}: reward shape {r.shape} != {(S, A)}")
        elif np.any(r < 0) or np.any(r > 1):
            problems.append(f"group {gid}: reward means outside [0, 1]")
        min_entry[gid] = float(k.min())
        zeros[gid] = int((k == 0).sum())
    return {
        "ok": not problems,
        "problems": problems,
        "kernel_min_entry": min_entry,
        "kernel_zero_entries": zeros,
        "assumption_positive_kernel": all(v > 0 for v in min_entry.values()) and bool(min_entry),
    }
