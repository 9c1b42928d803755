"""Episode simulation under the true kernel."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import kernels, rng
from .mdp import Policy, ProblemSpec, ShapeError

MAX_RESAMPLES = 32


class EmptyGroupError(RuntimeError):
    """Dropout left some group with nobody observed at some step."""


@dataclass(frozen=True)
class Trajectory:
    group: str
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    active_until: int

    @property
    def steps(self) -> list[tuple[int, int, float]]:
        return list(zip(self.states.tolist(), self.actions.tolist(), self.rewards.tolist()))


@dataclass(frozen=True)
class GroupRollouts:
    """Array-of-structs view of one group's individuals in a batch.

    Rows past ``active[i]`` are padding and carry no data.
    """

    states: np.ndarray  # (n, H) int16
    actions: np.ndarray  # (n, H) int8
    rewards: np.ndarray  # (n, H)
    active: np.ndarray  # (n,) number of observed steps
    episodes: np.ndarray  # (n,) episode index of each individual

    @property
    def n(self) -> int:
        return self.states.shape[0]


@dataclass(frozen=True)
class EpisodeBatch:
    """Individuals from one or more consecutive episodes ``first_episode .. last_episode``."""

    first_episode: int
    last_episode: int
    group_ids: tuple[str, ...]
    rollouts: tuple[GroupRollouts, ...]

    @property
    def episode(self) -> int:
        return self.last_episode

    @property
    def counts(self) -> np.ndarray:
        return np.array([r.n for r in self.rollouts])

    def trajectories(self, group: int) -> Iterator[Trajectory]:
        r = self.rollouts[group]
        for i in range(r.n):
            m = int(r.active[i])
            yield Trajectory(
                self.group_ids[group],
                r.states[i, :m].copy(),
                r.actions[i, :m].copy(),
                r.rewards[i, :m].copy(),
                m,
            )

    def to_csv(self, path: str | Path) -> None:
        """Long-format dump: one row per (individual, step) up to the horizon."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["episode", "group", "individual", "h", "x", "y", "a", "reward", "active"])
            for g, r in enumerate(self.rollouts):
                H = r.states.shape[1]
                for i in range(r.n):
                    for h in range(int(r.active[i])):
                        s = int(r.states[i, h])
                        w.writerow(
                            [int(r.episodes[i]), self.group_ids[g], i, h + 1, s // 2, s % 2,
                             int(r.actions[i, h]), repr(float(r.rewards[i, h])),
                             int(h + 1 < r.active[i] or r.active[i] == H)]
                        )


def _as_counts(n_per_group, q: int) -> np.ndarray:
    n = np.broadcast_to(np.asarray(n_per_group, dtype=np.int64), (q,)).copy()
    if np.any(n < 1):
        raise ValueError(f"every group needs n >= 1 individuals per episode, got {n.tolist()}")
    return n


def _uncovered_episodes(active: np.ndarray, episodes: np.ndarray, H: int) -> np.ndarray:
    """Episodes in which nobody of the group is observed up to the last step."""
    present = np.unique(episodes)
    full = np.unique(episodes[active >= H])
    return np.setdiff1d(present, full)


def sample_episodes(
    spec: ProblemSpec,
    policy: Policy,
    first_episode: int,
    n_episodes: int,
    n_per_group: int | Sequence[int],
    seed: int,
    survival: float | None = None,
) -> EpisodeBatch:
    """Sample ``n_episodes`` consecutive episodes under a fixed policy.

    Draws are keyed by ``(seed, group, episode, individual, attempt)``, so
    splitting the same episode range into smaller batches reproduces the same
    trajectories.
    """
    if policy.accept.shape != (spec.q, spec.H, spec.X):
        raise ShapeError(f"policy shape {policy.accept.shape} != {(spec.q, spec.H, spec.X)}")
    if n_episodes < 1 or first_episode < 1:
        raise ValueError("episodes are numbered from 1 and at least one is required")
    surv = 1.0 if survival is None else float(survival)
    if not 0.0 < surv <= 1.0:
        raise ValueError(f"survival probability must lie in (0, 1], got {surv}")
    n = _as_counts(n_per_group, spec.q)
    eps_all = np.arange(first_episode, first_episode + n_episodes, dtype=np.int64)
    rollouts = []
    for g in range(spec.q):
        episodes = np.repeat(eps_all, n[g])
        individuals = np.tile(np.arange(n[g], dtype=np.int64), n_episodes)
        keys = rng.stream_keys(seed, g, episodes, individuals)
        out = kernels.sample(
            keys, spec.kernel.initial[g], spec.kernel.probs[g], policy.accept[g],
            spec.reward.mean[g], spec.reward.family_code, surv,
        )
        states, actions, rewards, active = (np.array(o) for o in out)
        for attempt in range(1, MAX_RESAMPLES + 1):
            if surv >= 1.0:
                break
            bad = _uncovered_episodes(active, episodes, spec.H)
            if bad.size == 0:
                break
            if attempt == MAX_RESAMPLES:
                raise EmptyGroupError(
                    f"group {spec.groups.group_ids[g]} emptied by dropout in episode {int(bad[0])} "
                    f"after {MAX_RESAMPLES} resamples"
                )
            # redraw only the failing episodes, on a disjoint counter range
            rows = np.flatnonzero(np.isin(episodes, bad))
            keys = rng.stream_keys(seed, g, episodes[rows], individuals[rows] + attempt * (1 << 40))
            out = kernels.sample(
                keys, spec.kernel.initial[g], spec.kernel.probs[g], policy.accept[g],
                spec.reward.mean[g], spec.reward.family_code, surv,
            )
            for arr, new in zip((states, actions, rewards, active), out):
                arr[rows] = new
        rollouts.append(GroupRollouts(states, actions, rewards, active.astype(np.int64), episodes))
    return EpisodeBatch(first_episode, first_episode + n_episodes - 1, spec.groups.group_ids, tuple(rollouts))


def sample_episode(
    spec: ProblemSpec,
    policy: Policy,
    n_per_group: int | Sequence[int],
    seed: int,
    episode: int = 1,
    survival: float | None = None,
) -> EpisodeBatch:
    """One episode with ``n_per_group`` individuals per group."""
    return sample_episodes(spec, policy, episode, 1, n_per_group, seed, survival)
