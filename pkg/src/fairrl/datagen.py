"""Problem instances: the synthetic credit model and the score-table (FICO-style) model."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .mdp import A, GroupSpec, ProblemSpec, RewardModel, StateSpace, TransitionKernel

SCORES = np.array([0.0, 25.0, 50.0, 75.0, 100.0])

# p(x' | x, y') for the synthetic model; identical for both groups and both y'.
SYNTHETIC_MOVES = np.array(
    [
        [0.3, 0.25, 0.2, 0.15, 0.1],
        [0.22, 0.26, 0.22, 0.17, 0.13],
        [0.17, 0.21, 0.24, 0.21, 0.17],
        [0.13, 0.17, 0.22, 0.26, 0.22],
        [0.1, 0.15, 0.2, 0.25, 0.3],
    ]
)

# p(y'=1 | y, a) indexed [y, a].
SYNTHETIC_QUALIFY = np.array([[0.4, 0.6], [0.4, 0.6]])

# p(x' | x, y, a) for the score-table model, indexed [y][a][x] -> vector over x'.
SCORE_MOVES = np.array(
    [
        [  # y = 0
            [  # a = 0
                [0.38, 0.24, 0.19, 0.13, 0.06],
                [0.25, 0.3, 0.2, 0.15, 0.1],
                [0.18, 0.23, 0.27, 0.18, 0.14],
                [0.14, 0.18, 0.23, 0.27, 0.18],
                [0.1, 0.15, 0.2, 0.25, 0.3],
            ],
            [  # a = 1
                [0.3, 0.25, 0.2, 0.15, 0.1],
                [0.18, 0.27, 0.23, 0.18, 0.14],
                [0.14, 0.18, 0.27, 0.23, 0.18],
                [0.1, 0.15, 0.2, 0.3, 0.25],
                [0.1, 0.15, 0.2, 0.25, 0.3],
            ],
        ],
        [  # y = 1
            [  # a = 0
                [0.38, 0.24, 0.19, 0.13, 0.06],
                [0.25, 0.3, 0.2, 0.15, 0.1],
                [0.18, 0.23, 0.27, 0.18, 0.14],
                [0.14, 0.18, 0.23, 0.27, 0.18],
                [0.1, 0.15, 0.2, 0.25, 0.3],
            ],
            [  # a = 1
                [0.3, 0.25, 0.2, 0.15, 0.1],
                [0.18, 0.27, 0.23, 0.18, 0.14],
                [0.14, 0.18, 0.27, 0.23, 0.18],
                [0.1, 0.15, 0.2, 0.3, 0.25],
                [0.06, 0.13, 0.19, 0.24, 0.38],
            ],
        ],
    ]
)

DEFAULT_BETA_GAIN = (0.1, 0.9)
DEFAULT_BETA_LOSS = (0.9, 0.1)

STANDIN_NAME = "standin_empirical.json"


class EmpiricalFileError(ValueError):
    """Empirical score file is missing or does not follow the schema."""

    SCHEMA_HINT = (
        'expected JSON {"groups": [{"id": str, "score_marginal": [5 floats summing to 1], '
        '"qualify_given_score": [5 floats in [0, 1]], "proportion": float (optional)}, ...]}'
    )


@dataclass
class GeneratorConfig:
    variant: str = "synthetic"
    horizon: int = 8
    group_ids: tuple[str, ...] = ("alpha", "beta")
    proportions: tuple[float, ...] | None = None
    beta_gain: tuple[float, ...] = DEFAULT_BETA_GAIN
    beta_loss: tuple[float, ...] = DEFAULT_BETA_LOSS
    reward_family: str = "deterministic"
    # synthetic only
    initial_qualified: float = 0.5
    qualify: np.ndarray = field(default_factory=lambda: SYNTHETIC_QUALIFY.copy())
    moves: np.ndarray = field(default_factory=lambda: SYNTHETIC_MOVES.copy())
    # score-table only
    score_moves: np.ndarray = field(default_factory=lambda: SCORE_MOVES.copy())
    empirical: str | None = None

    def __post_init__(self):
        if self.variant not in ("synthetic", "fico"):
            raise ValueError(f"unknown variant {self.variant!r}")
        for name in ("beta_gain", "beta_loss"):
            vals = tuple(float(v) for v in getattr(self, name))
            if any(not 0.0 < v < 1.0 for v in vals):
                raise ValueError(f"{name} entries must lie in (0, 1), got {vals}")
            setattr(self, name, vals)
        self.moves = _check_vectors(self.moves, "feature-move table")
        self.score_moves = _check_vectors(self.score_moves, "score-move table")
        self.qualify = np.asarray(self.qualify, dtype=np.float64)
        if self.qualify.shape != (2, 2) or np.any(self.qualify < 0) or np.any(self.qualify > 1):
            raise ValueError("qualify table must be 2x2 probabilities p(y'=1 | y, a)")
        if not 0.0 <= self.initial_qualified <= 1.0:
            raise ValueError("initial_qualified must lie in [0, 1]")

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "GeneratorConfig":
        kw = dict(doc)
        for k in ("group_ids", "proportions", "beta_gain", "beta_loss"):
            if k in kw and kw[k] is not None:
                kw[k] = tuple(kw[k])
        for k in ("qualify", "moves", "score_moves"):
            if k in kw:
                kw[k] = np.asarray(kw[k], dtype=np.float64)
        return cls(**kw)


def _check_vectors(t, what: str) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0):
        raise ValueError(f"{what} has negative entries")
    dev = np.abs(t.sum(axis=-1) - 1.0)
    if np.any(dev > 1e-9):
        raise ValueError(f"{what} rows must sum to 1 (max deviation {dev.max():.3g})")
    return t


def score_reward(beta_gain: Sequence[float], beta_loss: Sequence[float], X: int = 5) -> tuple[np.ndarray, tuple[float, float]]:
    """Raw score-dependent reward ``r[g, s, a]`` and shared bounds ``(l, u)``.

    Accepting a qualified applicant earns ``gain * score``, accepting an
    unqualified one costs ``loss * score``, rejecting earns 0.
    """
    scores = SCORES if X == 5 else np.linspace(0.0, 100.0, X)
    q = len(beta_gain)
    raw = np.zeros((q, 2 * X, A))
    for g in range(q):
        raw[g, 1::2, 1] = beta_gain[g] * scores
        raw[g, 0::2, 1] = -beta_loss[g] * scores
    lo = -max(beta_loss) * scores.max()
    hi = max(beta_gain) * scores.max()
    return raw, (lo, hi)


def normalize_reward(raw: np.ndarray, bounds: tuple[float, float]) -> np.ndarray:
    lo, hi = bounds
    return (raw - lo) / (hi - lo)


def _proportions(cfg: GeneratorConfig, q: int, fallback=None) -> np.ndarray:
    if cfg.proportions is not None:
        return np.asarray(cfg.proportions, dtype=np.float64)
    if fallback is not None:
        return np.asarray(fallback, dtype=np.float64)
    return np.full(q, 1.0 / q)


def _reward_model(cfg: GeneratorConfig, q: int) -> RewardModel:
    if len(cfg.beta_gain) != q or len(cfg.beta_loss) != q:
        raise ValueError(f"need one reward coefficient per group ({q})")
    raw, bounds = score_reward(cfg.beta_gain, cfg.beta_loss)
    return RewardModel(normalize_reward(raw, bounds), family=cfg.reward_family, bounds=bounds)


def build_synthetic(cfg: GeneratorConfig | None = None) -> ProblemSpec:
    """Kernel ``p(x', y' | x, y, a) = p(y' | y, a) * p(x' | x, y')``."""
    cfg = cfg or GeneratorConfig()
    X = cfg.moves.shape[0]
    q = len(cfg.group_ids)
    moves = cfg.moves if cfg.moves.ndim == 3 else np.broadcast_to(cfg.moves, (2, X, X))
    S = 2 * X
    P = np.zeros((S, A, S))
    for x in range(X):
        for y in range(2):
            for a in range(A):
                qy = cfg.qualify[y, a]
                for y2, py in ((0, 1.0 - qy), (1, qy)):
                    P[2 * x + y, a, y2::2] = py * moves[y2, x]
    init = np.zeros(S)
    init[1::2] = cfg.initial_qualified / X
    init[0::2] = (1.0 - cfg.initial_qualified) / X
    return ProblemSpec(
        space=StateSpace(X, cfg.horizon),
        groups=GroupSpec(cfg.group_ids, _proportions(cfg, q)),
        kernel=TransitionKernel(np.broadcast_to(P, (q, S, A, S)), np.broadcast_to(init, (q, S))),
        reward=_reward_model(cfg, q),
        meta={"variant": "synthetic", "initial_qualified": cfg.initial_qualified},
    )


def load_empirical(path: str | Path | None = None) -> dict[str, Any]:
    """Read and validate an empirical score-distribution file.

    ``None`` loads the bundled synthetic stand-in (not real FICO data).
    """
    if path is None:
        text = resources.files("fairrl.data").joinpath(STANDIN_NAME).read_text()
        src = f"<bundled {STANDIN_NAME}>"
    else:
        p = Path(path)
        if not p.is_file():
            raise EmpiricalFileError(f"empirical file {p} not found; {EmpiricalFileError.SCHEMA_HINT}")
        text, src = p.read_text(), str(p)
    try:
        doc = json.loads(text)
        groups = doc["groups"]
        if len(groups) < 1:
            raise ValueError("no groups")
        for g in groups:
            m = np.asarray(g["score_marginal"], dtype=np.float64)
            c = np.asarray(g["qualify_given_score"], dtype=np.float64)
            if m.shape != (5,) or c.shape != (5,):
                raise ValueError(f"group {g.get('id')}: vectors must have 5 entries")
            if np.any(m < 0) or abs(m.sum() - 1.0) > 1e-9:
                raise ValueError(f"group {g.get('id')}: score_marginal must be a distribution")
            if np.any(c < 0) or np.any(c > 1):
                raise ValueError(f"group {g.get('id')}: qualify_given_score must lie in [0, 1]")
            str(g["id"])
    except (KeyError, TypeError, ValueError) as exc:
        raise EmpiricalFileError(f"{src}: {exc}; {EmpiricalFileError.SCHEMA_HINT}") from exc
    doc["source"] = src
    return doc


def build_fico(cfg: GeneratorConfig | None = None, empirical: str | Path | dict | None = None) -> ProblemSpec:
    """Score-table model: ``p(x', y' | x, y, a) = G[y, a, x][x'] * P_emp(y' | x')``."""
    cfg = cfg or GeneratorConfig(variant="fico")
    if isinstance(empirical, dict):
        emp = empirical
    else:
        emp = load_empirical(empirical if empirical is not None else cfg.empirical)
    groups = emp["groups"]
    q = len(groups)
    X = 5
    S = 2 * X
    ids = tuple(str(g["id"]) for g in groups)
    G = cfg.score_moves
    P = np.zeros((q, S, A, S))
    init = np.zeros((q, S))
    for gi, g in enumerate(groups):
        marg = np.asarray(g["score_marginal"], dtype=np.float64)
        qual = np.asarray(g["qualify_given_score"], dtype=np.float64)
        ylaw = np.stack([1.0 - qual, qual], axis=1)  # [x', y']
        init[gi] = (marg[:, None] * ylaw).reshape(S)
        for x in range(X):
            for y in range(2):
                for a in range(A):
                    P[gi, 2 * x + y, a] = (G[y, a, x][:, None] * ylaw).reshape(S)
    fallback = [g["proportion"] for g in groups] if all("proportion" in g for g in groups) else None
    if len(cfg.beta_gain) != q:
        raise ValueError(f"reward coefficients given for {len(cfg.beta_gain)} groups, file has {q}")
    return ProblemSpec(
        space=StateSpace(X, cfg.horizon),
        groups=GroupSpec(ids, _proportions(cfg, q, fallback)),
        kernel=TransitionKernel(P, init),
        reward=_reward_model(cfg, q),
        meta={"variant": "fico", "empirical": emp.get("source", "<dict>")},
    )


def build(cfg: GeneratorConfig) -> ProblemSpec:
    if cfg.variant == "synthetic":
        return build_synthetic(cfg)
    return build_fico(cfg)


def kernel_min_entries(spec: ProblemSpec) -> dict[str, float]:
    """Smallest kernel entry per group (zero entries violate the positivity assumption)."""
    return {gid: float(spec.kernel.probs[g].min()) for g, gid in enumerate(spec.groups.group_ids)}


def random_spec(
    seed: int,
    features: int = 5,
    horizon: int = 8,
    groups: int = 2,
    concentration: float = 1.0,
    reward_family: str = "deterministic",
) -> ProblemSpec:
    """Random instance with Dirichlet kernel rows and uniform mean rewards.

    Every kernel entry is positive almost surely.
    """
    rs = np.random.default_rng(seed)
    S = 2 * features
    P = rs.dirichlet(np.full(S, concentration), size=(groups, S, A))
    init = rs.dirichlet(np.full(S, concentration), size=groups)
    reward = rs.uniform(0.0, 1.0, size=(groups, S, A))
    props = rs.dirichlet(np.full(groups, 4.0))
    return ProblemSpec(
        space=StateSpace(features, horizon),
        groups=GroupSpec(tuple(f"g{i}" for i in range(groups)), props),
        kernel=TransitionKernel(P, init),
        reward=RewardModel(reward, family=reward_family),
        meta={"variant": "random", "seed": int(seed)},
    )
