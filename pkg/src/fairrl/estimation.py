"""Counting estimators, exploration bonus, and relaxation schedules."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .envsim import EpisodeBatch

ETA_CAP = 0.4


class SequencingError(ValueError):
    """A batch was ingested out of episode order."""


@dataclass(frozen=True)
class CountTable:
    """Cumulative counts per group.

    ``visits[g, s, a]`` counts every observed visit, ``trans[g, s, a, s']``
    only visits whose successor was observed, ``rsum[g, s, a]`` sums sampled
    rewards.
    """

    visits: np.ndarray
    trans: np.ndarray
    rsum: np.ndarray
    initial: np.ndarray  # (q, S) first-step state counts
    last_episode: int = 0

    @classmethod
    def empty(cls, q: int, S: int, A: int = 2) -> "CountTable":
        return cls(
            np.zeros((q, S, A), dtype=np.int64),
            np.zeros((q, S, A, S), dtype=np.int64),
            np.zeros((q, S, A)),
            np.zeros((q, S), dtype=np.int64),
            0,
        )

    @property
    def clamped(self) -> np.ndarray:
        """``N(s, a) = max(1, visits)``."""
        return np.maximum(self.visits, 1)


def update_counts(counts: CountTable, batch: EpisodeBatch) -> CountTable:
    if batch.first_episode <= counts.last_episode:
        raise SequencingError(
            f"batch starts at episode {batch.first_episode} but episodes up to "
            f"{counts.last_episode} were already ingested"
        )
    q, S, A = counts.visits.shape
    visits = counts.visits.copy()
    trans = counts.trans.copy()
    rsum = counts.rsum.copy()
    initial = counts.initial.copy()
    for g, r in enumerate(batch.rollouts):
        v, t, rs = kernels.count(r.states, r.actions, r.rewards, r.active, S, A)
        visits[g] += v
        trans[g] += t
        rsum[g] += rs
        initial[g] += np.bincount(r.states[:, 0].astype(np.int64), minlength=S)
    return CountTable(visits, trans, rsum, initial, batch.last_episode)


def bonus(N: np.ndarray, k: int, delta: float, H: int, S: int, A: int = 2) -> np.ndarray:
    """``min(2H, 2H sqrt(2 ln(16 S A H k^2 / delta) / N))``."""
    N = np.asarray(N, dtype=np.float64)
    log_term = math.log(16.0 * S * A * H * k * k / delta)
    return np.minimum(2.0 * H, 2.0 * H * np.sqrt(2.0 * log_term / N))


def epsilon_k(k: int, H: int, S: int) -> float:
    return 1.0 / (k * H * S)


def eta_k(k: int, cap: float = ETA_CAP) -> float:
    """Policy-box half-width ``k^{-1/3}``, capped so ``[eta, 1 - eta]`` is never empty."""
    return min(k ** (-1.0 / 3.0), cap)


def compat_c(n_min: Sequence[float], k: int, H: int, S: int, A: int, delta: float, eps: float | None = None) -> float:
    """Demographic-parity relaxation, summed over groups and clamped to 1."""
    eps = epsilon_k(k, H, S) if eps is None else eps
    log_term = math.log(16.0 * S * A * H * k * k / (eps * delta))
    total = 0.0
    for n in n_min:
        if n < 1:
            raise ValueError("minimum visit counts are clamped at 1")
        total += H * math.sqrt(2.0 * S * log_term / n) + 2.0 * eps * H * S
    return min(total, 1.0)


def compat_d_gate(n: float, k: int, S: int, A: int, delta: float) -> float:
    return math.sqrt((4.0 * math.log(2.0) + 2.0 * math.log(4.0 * S * A * k * k / delta)) / n)


def compat_d(
    n_min: Sequence[float],
    p_min: Sequence[float],
    k: int,
    H: int,
    S: int,
    A: int,
    delta: float,
    eps: float | None = None,
) -> float:
    """Equal-opportunity relaxation; falls back to 1 unless every group clears the gate."""
    eps = epsilon_k(k, H, S) if eps is None else eps
    for p in p_min:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"p_min must lie in [0, 1], got {p}")
    gates = [compat_d_gate(n, k, S, A, delta) for n in n_min]
    if not all(p > g for p, g in zip(p_min, gates)):
        return 1.0
    log_term = math.log(32.0 * S * A * k * k / (eps * delta))
    total = 0.0
    for n, p, gate in zip(n_min, p_min, gates):
        num = 3.0 * H * math.sqrt(2.0 * S * log_term / n) + 3.0 * eps * H * S
        total += num / (p * (p - gate))
    return min(total, 1.0)


@dataclass(frozen=True)
class EstimatedModel:
    """Empirical model of every group after ``k - 1`` episodes."""

    k: int
    kernel: np.ndarray  # (q, S, A, S)
    reward_hat: np.ndarray  # (q, S, A)
    bonus: np.ndarray  # (q, S, A)
    N: np.ndarray  # clamped counts (q, S, A)
    initial: np.ndarray  # (q, S) empirical first-step law

    @property
    def reward(self) -> np.ndarray:
        """Optimistic reward ``r_hat + b_hat`` (not clamped above)."""
        return self.reward_hat + self.bonus

    @property
    def n_min(self) -> np.ndarray:
        return self.N.reshape(self.N.shape[0], -1).min(axis=1)

    @property
    def p_min(self) -> np.ndarray:
        """``min_{s,a} p_k(y' = 1 | s, a)`` per group."""
        return self.kernel[..., 1::2].sum(axis=-1).reshape(self.kernel.shape[0], -1).min(axis=1)


def build_model(counts: CountTable, k: int, delta: float, H: int, S: int | None = None, A: int = 2) -> EstimatedModel:
    """Empirical kernel, mean reward, and bonus.

    Transition rows are normalised by the number of *observed* successors; rows
    with none fall back to the uniform distribution and the reward of unvisited
    pairs is 0.
    """
    if k < 1:
        raise ValueError("episode index k starts at 1")
    q, S_, A_ = counts.visits.shape
    S = S_ if S is None else S
    N = counts.clamped
    nt = counts.trans.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(nt > 0, counts.trans / np.maximum(nt, 1), 1.0 / S_)
    r_hat = counts.rsum / N
    b = bonus(N, k, delta, H, S, A)
    n0 = counts.initial.sum(axis=1, keepdims=True)
    init = np.where(n0 > 0, counts.initial / np.maximum(n0, 1), 1.0 / S_)
    return EstimatedModel(k, p, r_hat, b, N, init)


@dataclass(frozen=True)
class RelaxationSchedule:
    k: int
    delta: float
    eps: float
    eta: float
    c_hat: np.ndarray  # (H,)
    d_hat: np.ndarray  # (H,)
    n_min: np.ndarray
    p_min: np.ndarray


def schedule(model: EstimatedModel, delta: float, H: int, A: int = 2) -> RelaxationSchedule:
    q, S = model.kernel.shape[:2]
    k = model.k
    eps = epsilon_k(k, H, S)
    c = compat_c(model.n_min, k, H, S, A, delta, eps)
    d = compat_d(model.n_min, model.p_min, k, H, S, A, delta, eps)
    return RelaxationSchedule(
        k, delta, eps, eta_k(k), np.full(H, c), np.full(H, d), model.n_min.copy(), model.p_min.copy()
    )


def snapshot(model: EstimatedModel, counts: CountTable, sched: RelaxationSchedule, group_ids: Sequence[str]) -> dict:
    return {
        "episode": int(model.k),
        "c_hat": sched.c_hat.tolist(),
        "d_hat": sched.d_hat.tolist(),
        "eta": sched.eta,
        "epsilon": sched.eps,
        "groups": [
            {
                "id": str(gid),
                "visits": counts.visits[g].tolist(),
                "transitions": counts.trans[g].tolist(),
                "p_k": model.kernel[g].tolist(),
                "r_hat": model.reward_hat[g].tolist(),
                "bonus": model.bonus[g].tolist(),
            }
            for g, gid in enumerate(group_ids)
        ],
    }


def dump_snapshot(path: str | Path, *args) -> None:
    Path(path).write_text(json.dumps(snapshot(*args)))
