"""Policy optimisation under stepwise fairness constraints.

The decision variables are the acceptance probabilities ``theta[g, h, x]``;
occupancies follow from the forward recursion, so the flow and "policy only
sees x" conditions hold by construction and only the fairness inequalities
remain. Those are handled by an augmented Lagrangian whose inner problem is a
box-constrained smooth maximisation solved by spectral projected gradient.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from ._accel import njit
from .mdp import DENOMINATOR_FLOOR, DegenerateConditioningError, Policy

KINDS = ("DP", "EqOpt", "None", "DP-penalty", "EqOpt-penalty")
ORACLE_MAX_PARAMS = 8


class OracleBudgetError(ValueError):
    """Grid enumeration would exceed the parameter budget."""


@dataclass(frozen=True)
class SolverOptions:
    restarts: int = 8
    seed: int = 0
    inner_tol: float = 1e-7
    inner_max_iter: int = 400
    feas_tol: float = 1e-5
    mu0: float = 10.0
    growth: float = 10.0
    max_outer: int = 12
    trace_path: str | None = None


@dataclass(frozen=True)
class SolveProblem:
    """One planning problem on a (possibly estimated) model.

    ``reward`` may exceed 1 (optimistic rewards). ``bound`` holds the per-step
    relaxation; ``eta`` the lower bound on both action probabilities.
    """

    kernel: np.ndarray  # (q, S, A, S)
    initial: np.ndarray  # (q, S)
    reward: np.ndarray  # (q, S, A)
    proportions: np.ndarray  # (q,)
    horizon: int
    kind: str = "DP"
    bound: np.ndarray | float = 1.0
    eta: float = 0.0
    lam: float = 0.0
    options: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown constraint kind {self.kind!r}")
        if not 0.0 <= self.eta < 0.5:
            raise ValueError(f"eta must lie in [0, 0.5), got {self.eta}")
        b = np.broadcast_to(np.asarray(self.bound, dtype=np.float64), (self.horizon,)).copy()
        if np.any(b < 0):
            raise ValueError("relaxation bounds must be non-negative")
        object.__setattr__(self, "bound", np.minimum(b, 1.0))
        if self.lam < 0:
            raise ValueError("penalty weight must be non-negative")
        for name in ("kernel", "initial", "reward", "proportions"):
            object.__setattr__(self, name, np.ascontiguousarray(getattr(self, name), dtype=np.float64))

    @property
    def q(self) -> int:
        return self.kernel.shape[0]

    @property
    def S(self) -> int:
        return self.kernel.shape[1]

    @property
    def X(self) -> int:
        return self.S // 2

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.q, self.horizon, self.X)

    @classmethod
    def from_spec(cls, spec, kind: str = "DP", **kw) -> "SolveProblem":
        """Planning problem on the true model of a :class:`ProblemSpec`."""
        return cls(spec.kernel.probs, spec.kernel.initial, spec.reward.mean, spec.groups.proportions, spec.H, kind, **kw)

    @classmethod
    def from_estimate(cls, model, proportions, horizon: int, kind: str = "DP", **kw) -> "SolveProblem":
        """Planning problem on an estimated model with optimistic reward."""
        return cls(model.kernel, model.initial, model.reward, proportions, horizon, kind, **kw)

    def with_(self, **kw) -> "SolveProblem":
        return replace(self, **kw)


@dataclass(frozen=True)
class SolveResult:
    policy: Policy
    objective: float
    max_violation: float
    status: str  # "feasible" | "best-effort-infeasible"
    diagnostics: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"


# ---------------------------------------------------------------------------
# exact evaluation of objective and fairness functionals
# ---------------------------------------------------------------------------


def _weights(reward: np.ndarray, H: int) -> np.ndarray:
    """Functionals per group: [objective, P(a_h=1) x H, P(y_h=1, a_h=1) x H, P(y_h=1) x H]."""
    S = reward.shape[0]
    W = np.zeros((1 + 3 * H, H, S, 2))
    W[0] = reward[None]
    for h in range(H):
        W[1 + h, h, :, 1] = 1.0
        W[1 + H + h, h, 1::2, 1] = 1.0
        W[1 + 2 * H + h, h, 1::2, :] = 1.0
    return W


@dataclass
class Evaluation:
    objective: float
    d_objective: np.ndarray  # (q, H, X)
    marg: np.ndarray  # (q, H) P(a_h = 1)
    d_marg: np.ndarray  # (q, H, H, X)
    num: np.ndarray  # (q, H) P(y_h = 1, a_h = 1)
    d_num: np.ndarray
    den: np.ndarray  # (q, H) P(y_h = 1)
    d_den: np.ndarray
    values: np.ndarray  # (q,) unweighted per-group objective


class Evaluator:
    """Objective and fairness functionals with adjoint gradients."""

    def __init__(self, problem: SolveProblem):
        self.problem = problem
        H = problem.horizon
        self.W = [_weights(problem.reward[g], H) for g in range(problem.q)]
        self.pairs = list(itertools.combinations(range(problem.q), 2))

    def __call__(self, theta: np.ndarray) -> Evaluation:
        p = self.problem
        H = p.horizon
        vals = np.empty((p.q, 1 + 3 * H))
        grads = np.empty((p.q, 1 + 3 * H, H, p.X))
        for g in range(p.q):
            vals[g], grads[g], _ = kernels.functionals(theta[g], p.kernel[g], p.initial[g], self.W[g])
        w = p.proportions
        return Evaluation(
            objective=float(w @ vals[:, 0]),
            d_objective=w[:, None, None] * grads[:, 0],
            marg=vals[:, 1 : 1 + H],
            d_marg=grads[:, 1 : 1 + H],
            num=vals[:, 1 + H : 1 + 2 * H],
            d_num=grads[:, 1 + H : 1 + 2 * H],
            den=vals[:, 1 + 2 * H :],
            d_den=grads[:, 1 + 2 * H :],
            values=vals[:, 0],
        )

    # -- constraint functionals: one value per (pair, step) ---------------

    def dp_diff(self, ev: Evaluation):
        """``P_i(a_h=1) - P_j(a_h=1)`` for every pair and step, with gradients."""
        p = self.problem
        vals, grads = [], []
        for i, j in self.pairs:
            vals.append(ev.marg[i] - ev.marg[j])
            g = np.zeros((p.horizon,) + p.shape)
            g[:, i] = ev.d_marg[i]
            g[:, j] = -ev.d_marg[j]
            grads.append(g)
        return np.concatenate(vals), np.concatenate(grads)

    def eqopt_cross(self, ev: Evaluation, scale: np.ndarray | None = None):
        """Cross-multiplied conditional gap ``(n_i d_j - n_j d_i) * scale``.

        With ``scale = 1 / (d_i d_j)`` at the current point this equals the
        gap of the conditional probabilities.
        """
        p = self.problem
        vals, grads = [], []
        for k, (i, j) in enumerate(self.pairs):
            sc = np.ones(p.horizon) if scale is None else scale[k]
            ni, nj, di, dj = ev.num[i], ev.num[j], ev.den[i], ev.den[j]
            vals.append((ni * dj - nj * di) * sc)
            g = np.zeros((p.horizon,) + p.shape)
            g[:, i] = (ev.d_num[i] * dj[:, None, None] - nj[:, None, None] * ev.d_den[i]) * sc[:, None, None]
            g[:, j] = (ni[:, None, None] * ev.d_den[j] - ev.d_num[j] * di[:, None, None]) * sc[:, None, None]
            grads.append(g)
        return np.concatenate(vals), np.concatenate(grads)

    def eqopt_scale(self, ev: Evaluation) -> np.ndarray:
        return np.array([1.0 / np.maximum(ev.den[i] * ev.den[j], DENOMINATOR_FLOOR**2) for i, j in self.pairs])

    def gaps(self, ev: Evaluation, kind: str) -> np.ndarray:
        """Exact per-(pair, step) gaps: marginal difference or conditional difference."""
        if kind.startswith("DP"):
            return np.concatenate([ev.marg[i] - ev.marg[j] for i, j in self.pairs])
        return np.concatenate([ev.num[i] / ev.den[i] - ev.num[j] / ev.den[j] for i, j in self.pairs])

    def max_violation(self, ev: Evaluation, kind: str) -> float:
        if kind not in ("DP", "EqOpt") or not self.pairs or np.all(self.problem.bound >= 1.0):
            return 0.0
        bound = np.tile(self.problem.bound, len(self.pairs))
        return float(np.max(np.maximum(np.abs(self.gaps(ev, kind)) - bound, 0.0)))


# ---------------------------------------------------------------------------
# box-constrained ascent
# ---------------------------------------------------------------------------


def _project(theta: np.ndarray, eta: float) -> np.ndarray:
    return np.clip(theta, eta, 1.0 - eta)


def projected_ascent(fun, theta0: np.ndarray, eta: float, tol: float, max_iter: int):
    """Spectral projected gradient ascent with a non-monotone Armijo search.

    ``fun(theta) -> (value, grad)``. Stops when the projected-gradient step
    ``|P(theta + g) - theta|_inf`` drops below ``tol``.
    """
    theta = _project(theta0, eta)
    f, g = fun(theta)
    history = [f]
    alpha = 1.0 / max(1.0, float(np.abs(g).max()))
    it = 0
    for it in range(1, max_iter + 1):
        if np.abs(_project(theta + g, eta) - theta).max() <= tol:
            break
        d = _project(theta + alpha * g, eta) - theta
        slope = float(np.vdot(g, d))
        ref = max(history[-10:])
        t = 1.0
        while True:
            cand = theta + t * d
            fc, gc = fun(cand)
            if fc >= ref + 1e-4 * t * slope or t < 1e-12:
                break
            t *= 0.5
        s = cand - theta
        y = gc - g
        theta, f, g = cand, fc, gc
        history.append(f)
        sy = -float(np.vdot(s, y))
        ss = float(np.vdot(s, s))
        alpha = ss / sy if sy > 1e-300 else 1e3
        alpha = min(max(alpha, 1e-10), 1e10)
        if ss == 0.0:
            break
    return theta, f, it


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------


def _best_response_sweep(problem: SolveProblem, theta: np.ndarray) -> np.ndarray:
    """One backward sweep of stepwise best responses for every group.

    At step ``h`` the state law is exact for the current earlier-step policy
    and continuation values use the already-updated later steps, so each
    update cannot decrease the objective.
    """
    eta, H = problem.eta, problem.horizon
    theta = theta.copy()
    for g in range(problem.q):
        P, r = problem.kernel[g], problem.reward[g]
        _, d = kernels.forward(theta[g], P, problem.initial[g])
        V = np.zeros(problem.S)
        for h in range(H - 1, -1, -1):
            Q = r + P @ V
            adv = (d[h] * (Q[:, 1] - Q[:, 0])).reshape(problem.X, 2).sum(axis=1)
            # exact ties go to the lower action
            theta[g, h] = np.where(adv > 0, 1.0 - eta, eta)
            p1 = np.repeat(theta[g, h], 2)
            V = (1.0 - p1) * Q[:, 0] + p1 * Q[:, 1]
    return theta


def _sweep_to_fixpoint(problem: SolveProblem, theta: np.ndarray, max_sweeps: int = 100) -> np.ndarray:
    for _ in range(max_sweeps):
        nxt = _best_response_sweep(problem, theta)
        if np.array_equal(nxt, theta):
            break
        theta = nxt
    return theta


def _objective(problem: SolveProblem, theta: np.ndarray) -> float:
    return sum(
        problem.proportions[g]
        * float(np.einsum("hsa,sa->", kernels.forward(theta[g], problem.kernel[g], problem.initial[g])[0], problem.reward[g]))
        for g in range(problem.q)
    )


def solve_unconstrained(problem: SolveProblem) -> SolveResult:
    """Box-constrained stepwise best responses (no fairness term).

    For observable-state problems one sweep is classic backward induction.
    With the hidden ``y`` the sweep is repeated to a fixpoint from several
    starts; instances with at most 12 parameters per group are solved exactly by
    enumerating endpoint policies.
    """
    eta = problem.eta
    per_group = problem.horizon * problem.X
    if per_group <= 12:
        theta = _endpoint_enumeration(problem)
        method = "endpoint-enumeration"
    else:
        starts = [np.full(problem.shape, v) for v in (0.5, eta, 1.0 - eta)]
        cands = [_sweep_to_fixpoint(problem, _project(t, eta)) for t in starts]
        objs = [_objective(problem, c) for c in cands]
        theta = cands[int(np.argmax(objs))]
        method = "best-response-sweeps"
    return SolveResult(Policy(theta), _objective(problem, theta), 0.0, "feasible", {"method": method})


def _endpoint_enumeration(problem: SolveProblem) -> np.ndarray:
    eta, H, X = problem.eta, problem.horizon, problem.X
    n = H * X
    bits = ((np.arange(2**n)[:, None] >> np.arange(n)[None, :]) & 1).astype(np.float64)
    pis = np.where(bits > 0, 1.0 - eta, eta).reshape(-1, H, X)
    theta = np.empty(problem.shape)
    for g in range(problem.q):
        rho = kernels.forward_batch(pis, problem.kernel[g], problem.initial[g])
        vals = np.einsum("nhsa,sa->n", rho, problem.reward[g])
        # lowest index wins ties: prefers rejection, matching the sweep rule
        theta[g] = pis[int(np.argmax(vals))]
    return theta


# ---------------------------------------------------------------------------
# augmented Lagrangian
# ---------------------------------------------------------------------------


def _check_conditioning(problem: SolveProblem) -> None:
    """Raise when some step's ``P(y=1)`` can vanish and the EqOpt bound binds."""
    if _vacuous(problem):
        return
    for g in range(problem.q):
        init_mass = problem.initial[g, 1::2].sum()
        trans_min = problem.kernel[g][..., 1::2].sum(axis=-1).min() if problem.horizon > 1 else 1.0
        den = min(init_mass, trans_min)
        if den < DENOMINATOR_FLOOR:
            raise DegenerateConditioningError(
                f"group {g}: P(y=1) can fall below the floor; use the fallback relaxation or DP", float(den)
            )


def _vacuous(problem: SolveProblem) -> bool:
    return bool(np.all(problem.bound >= 1.0))


def _starts(problem: SolveProblem) -> list[tuple[str, np.ndarray]]:
    eta, shape = problem.eta, problem.shape
    rs = np.random.default_rng(np.random.SeedSequence([problem.options.seed, 0x5EED]))
    greedy = solve_unconstrained(problem.with_(kind="None")).policy.accept
    starts = [
        ("all-accept", np.full(shape, 1.0 - eta)),
        ("greedy", np.array(greedy)),
        ("midpoint", np.full(shape, 0.5)),
    ]
    i = 0
    while len(starts) < max(1, problem.options.restarts):
        starts.append((f"random-{i}", _project(rs.uniform(0.0, 1.0, shape), eta)))
        i += 1
    return starts[: max(1, problem.options.restarts)]


class _AugmentedLagrangian:
    def __init__(self, problem: SolveProblem, ev: Evaluator):
        self.p = problem
        self.ev = ev
        self.kind = problem.kind
        self.bound = np.tile(problem.bound, len(ev.pairs))

    def constraints(self, e: Evaluation, scale):
        """One-sided constraints ``g <= 0``: ``[gap - b, -gap - b]``."""
        if self.kind == "DP":
            gap, dgap = self.ev.dp_diff(e)
        else:
            gap, dgap = self.ev.eqopt_cross(e, scale)
        g = np.concatenate([gap - self.bound, -gap - self.bound])
        dg = np.concatenate([dgap, -dgap])
        return g, dg

    def solve(self, theta0: np.ndarray, trace: list | None = None, tag: str = ""):
        opts, eta = self.p.options, self.p.eta
        m = 2 * len(self.ev.pairs) * self.p.horizon
        lam = np.zeros(m)
        mu = opts.mu0
        theta = _project(theta0, eta)
        viol_hist = []
        inner_total = 0
        for outer in range(opts.max_outer):
            scale = self.ev.eqopt_scale(self.ev(theta)) if self.kind == "EqOpt" else None

            def fun(t, lam=lam, mu=mu, scale=scale):
                e = self.ev(t)
                g, dg = self.constraints(e, scale)
                shifted = np.maximum(0.0, lam + mu * g)
                val = e.objective - (np.sum(shifted**2) - np.sum(lam**2)) / (2.0 * mu)
                grad = e.d_objective - np.tensordot(shifted, dg, axes=1)
                return val, grad

            theta, _, its = projected_ascent(fun, theta, eta, opts.inner_tol, opts.inner_max_iter)
            inner_total += its
            e = self.ev(theta)
            g, _ = self.constraints(e, scale)
            lam = np.maximum(0.0, lam + mu * g)
            viol = self.ev.max_violation(e, self.kind)
            viol_hist.append(viol)
            if trace is not None:
                trace.append((tag, outer, e.objective, viol, mu, float(lam.max(initial=0.0))))
            if viol <= opts.feas_tol and outer > 0:
                break
            if outer > 0 and viol > 0.25 * viol_hist[-2]:
                mu *= opts.growth
        return theta, {"outer_iterations": len(viol_hist), "inner_iterations": inner_total,
                       "violation_history": viol_hist, "multipliers": lam.tolist(), "mu": mu}


def _write_trace(path: str, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["restart", "outer", "objective", "max_violation", "mu", "max_multiplier"])
        for r in rows:
            w.writerow(r)


def solve_constrained(problem: SolveProblem) -> SolveResult:
    """Maximise the objective subject to per-step pairwise fairness bounds."""
    if problem.kind not in ("DP", "EqOpt"):
        raise ValueError(f"solve_constrained needs kind DP or EqOpt, got {problem.kind!r}")
    if problem.kind == "EqOpt":
        _check_conditioning(problem)
    if _vacuous(problem):
        # gaps of probabilities never exceed 1
        res = solve_unconstrained(problem)
        return replace(res, diagnostics={**res.diagnostics, "vacuous_bound": True})
    ev = Evaluator(problem)
    al = _AugmentedLagrangian(problem, ev)
    tol = problem.options.feas_tol
    trace: list | None = [] if problem.options.trace_path else None
    candidates = []
    runs = []
    for idx, (name, start) in enumerate(_starts(problem)):
        e0 = ev(start)
        candidates.append((idx, name + ":start", start, e0.objective, ev.max_violation(e0, problem.kind)))
        theta, diag = al.solve(start, trace, name)
        e = ev(theta)
        v = ev.max_violation(e, problem.kind)
        candidates.append((idx, name, theta, e.objective, v))
        runs.append({"start": name, "objective": e.objective, "max_violation": v, **diag})
    if trace is not None:
        _write_trace(problem.options.trace_path, trace)
    feasible = [c for c in candidates if c[4] <= tol]
    if feasible:
        best = max(feasible, key=lambda c: (c[3], -c[0]))
        status = "feasible"
    else:
        best = min(candidates, key=lambda c: (c[4], c[0]))
        status = "best-effort-infeasible"
    return SolveResult(
        Policy(best[2]),
        float(best[3]),
        float(best[4]),
        status,
        {"restarts": len(runs), "chosen": best[1], "runs": runs},
    )


# ---------------------------------------------------------------------------
# penalty surrogates
# ---------------------------------------------------------------------------


def penalty_value(ev: Evaluator, e: Evaluation, kind: str, lam: float):
    """``lam * sum_h gap_h^2`` with its gradient.

    DP uses the marginal gap; EqOpt uses the unnormalised cross product
    ``u_h - v_h = n_j d_i - n_i d_j``.
    """
    if kind.startswith("DP"):
        gap, dgap = ev.dp_diff(e)
    else:
        gap, dgap = ev.eqopt_cross(e, None)
    return lam * float(gap @ gap), 2.0 * lam * np.tensordot(gap, dgap, axes=1)


def solve_penalty(problem: SolveProblem) -> SolveResult:
    if problem.kind not in ("DP-penalty", "EqOpt-penalty"):
        raise ValueError(f"solve_penalty needs a penalty kind, got {problem.kind!r}")
    ev = Evaluator(problem)
    opts = problem.options

    def fun(t):
        e = ev(t)
        pen, dpen = penalty_value(ev, e, problem.kind, problem.lam)
        return e.objective - pen, e.d_objective - dpen

    best = None
    runs = []
    for idx, (name, start) in enumerate(_starts(problem)):
        theta, val, its = projected_ascent(fun, start, problem.eta, opts.inner_tol, 20 * opts.inner_max_iter)
        runs.append({"start": name, "penalized": val, "iterations": its})
        if best is None or val > best[1]:
            best = (theta, val, idx)
    theta = best[0]
    e = ev(theta)
    gaps = np.abs(ev.gaps(e, problem.kind)) if ev.pairs else np.zeros(1)
    return SolveResult(
        Policy(theta),
        e.objective,
        0.0,
        "feasible",
        {"penalized_objective": best[1], "max_gap": float(gaps.max()), "runs": runs},
    )


def solve(problem: SolveProblem) -> SolveResult:
    if problem.kind in ("DP", "EqOpt"):
        return solve_constrained(problem)
    if problem.kind == "None":
        return solve_unconstrained(problem)
    return solve_penalty(problem)


# ---------------------------------------------------------------------------
# brute-force grid oracle
# ---------------------------------------------------------------------------


def grid_values(step: float, eta: float) -> np.ndarray:
    inner = np.arange(0.0, 1.0 + 1e-12, step)
    inner = inner[(inner > eta + 1e-12) & (inner < 1.0 - eta - 1e-12)]
    return np.unique(np.concatenate([[eta], inner, [1.0 - eta]]))


@njit
def _join_feasible(Ja, Fa, Jb, Fb, bound, tol):
    """Best ``Ja[i] + Jb[j]`` with ``|Fa[i] - Fb[j]| <= bound`` (inputs sorted by J desc)."""
    best = -np.inf
    bi = -1
    bj = -1
    H = Fa.shape[1]
    for i in range(Ja.shape[0]):
        if Ja[i] + Jb[0] <= best:
            break
        for j in range(Jb.shape[0]):
            tot = Ja[i] + Jb[j]
            if tot <= best:
                break
            ok = True
            for h in range(H):
                if abs(Fa[i, h] - Fb[j, h]) > bound[h] + tol:
                    ok = False
                    break
            if ok:
                best = tot
                bi = i
                bj = j
                break
    return best, bi, bj


@njit
def _join_penalty(Ja, Fa, Jb, Fb, lam, cross):
    """Best ``Ja + Jb - lam * sum gap^2`` by exhaustive pruned search (inputs sorted by J desc)."""
    best = -np.inf
    bi = -1
    bj = -1
    H = Fa.shape[1] // 2 if cross else Fa.shape[1]
    for i in range(Ja.shape[0]):
        if Ja[i] + Jb[0] <= best:
            break
        for j in range(Jb.shape[0]):
            if Ja[i] + Jb[j] <= best:
                break
            pen = 0.0
            for h in range(H):
                if cross:
                    gap = Fb[j, h] * Fa[i, H + h] - Fa[i, h] * Fb[j, H + h]
                else:
                    gap = Fa[i, h] - Fb[j, h]
                pen += gap * gap
            tot = Ja[i] + Jb[j] - lam * pen
            if tot > best:
                best = tot
                bi = i
                bj = j
    return best, bi, bj


def brute_force_oracle(problem: SolveProblem, grid_step: float = 0.05) -> SolveResult:
    """Exhaustive search over a policy grid (at most 8 parameters in total).

    Each group's grid is enumerated and evaluated exactly; the two groups are
    then joined by a pruned search in decreasing objective order, which is
    exact because the objective is a sum of per-group terms.
    """
    q, H, X = problem.shape
    n_params = q * H * X
    if n_params > ORACLE_MAX_PARAMS:
        raise OracleBudgetError(f"{n_params} policy parameters exceed the oracle budget of {ORACLE_MAX_PARAMS}")
    if q > 2:
        raise OracleBudgetError("the oracle joins at most two groups")
    kind = problem.kind
    if kind == "EqOpt":
        _check_conditioning(problem)
    vals = grid_values(grid_step, problem.eta)
    per = H * X
    combos = np.array(list(itertools.product(vals, repeat=per))).reshape(-1, H, X)
    J, F = [], []
    for g in range(q):
        rho = kernels.forward_batch(combos, problem.kernel[g], problem.initial[g])
        J.append(problem.proportions[g] * np.einsum("nhsa,sa->n", rho, problem.reward[g]))
        marg = rho[..., 1].sum(axis=2)
        num = rho[:, :, 1::2, 1].sum(axis=2)
        den = rho[:, :, 1::2, :].sum(axis=(2, 3))
        if kind == "DP" or kind == "DP-penalty":
            F.append(marg)
        elif kind == "EqOpt":
            F.append(num / den)
        else:
            F.append(np.concatenate([num, den], axis=1))
    if q == 1 or kind == "None":
        idx = [int(np.argmax(j)) for j in J]
        theta = np.stack([combos[i] for i in idx])
        best = float(sum(J[g][idx[g]] for g in range(q)))
    else:
        oa = np.argsort(-J[0], kind="stable")
        ob = np.argsort(-J[1], kind="stable")
        Ja, Fa, Jb, Fb = J[0][oa], np.ascontiguousarray(F[0][oa]), J[1][ob], np.ascontiguousarray(F[1][ob])
        if kind in ("DP", "EqOpt"):
            best, i, j = _join_feasible(Ja, Fa, Jb, Fb, problem.bound, 1e-12)
        else:
            best, i, j = _join_penalty(Ja, Fa, Jb, Fb, problem.lam, kind == "EqOpt-penalty")
        if i < 0:
            return SolveResult(Policy(np.full(problem.shape, 0.5)), -np.inf, np.inf, "best-effort-infeasible",
                               {"grid_points": len(vals)})
        theta = np.stack([combos[oa[i]], combos[ob[j]]])
        best = float(best)
    ev = Evaluator(problem)
    e = ev(theta)
    return SolveResult(
        Policy(theta),
        e.objective if kind not in ("DP-penalty", "EqOpt-penalty") else best,
        ev.max_violation(e, kind),
        "feasible",
        {"grid_points": len(vals), "objective": e.objective},
    )
