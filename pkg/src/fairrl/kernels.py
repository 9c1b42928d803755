"""Hot numeric kernels with a numba path and a pure-numpy path.

Layout conventions shared by every kernel:

* ``pi``     (H, X)      acceptance probabilities pi_h(a=1 | x)
* ``P``      (S, A, S)   transition kernel, ``s = 2 * x + y``
* ``init``   (S,)        initial state distribution
* ``rho``    (H, S, A)   occupancy measure
* ``W``      (F, H, S, A) weights of F linear functionals of ``rho``

Both paths must return bit-identical results for the sampler (it only compares
uniforms against precomputed CDFs); the occupancy/adjoint paths agree to
rounding.
"""
from __future__ import annotations

import numpy as np

from . import rng
from ._accel import USE_NUMBA, njit

try:
    from numba import prange
except ImportError:  # pragma: no cover
    prange = range

REWARD_DETERMINISTIC = 0
REWARD_BERNOULLI = 1


# ---------------------------------------------------------------------------
# forward occupancy
# ---------------------------------------------------------------------------


@njit
def _forward_nb(pi, P, init):
    H, X = pi.shape
    S, A, _ = P.shape
    rho = np.zeros((H, S, A))
    d = np.zeros((H, S))
    for s in range(S):
        d[0, s] = init[s]
    for h in range(H):
        for s in range(S):
            p1 = pi[h, s // 2]
            rho[h, s, 0] = d[h, s] * (1.0 - p1)
            rho[h, s, 1] = d[h, s] * p1
        if h + 1 < H:
            for s in range(S):
                for a in range(A):
                    w = rho[h, s, a]
                    if w != 0.0:
                        for t in range(S):
                            d[h + 1, t] += w * P[s, a, t]
    return rho, d


def _forward_np(pi, P, init):
    H, X = pi.shape
    S, A, _ = P.shape
    rho = np.zeros((H, S, A))
    d = np.zeros((H, S))
    d[0] = init
    p1 = np.repeat(pi, 2, axis=1)
    for h in range(H):
        rho[h, :, 0] = d[h] * (1.0 - p1[h])
        rho[h, :, 1] = d[h] * p1[h]
        if h + 1 < H:
            d[h + 1] = np.einsum("sa,sat->t", rho[h], P)
    return rho, d


def forward(pi: np.ndarray, P: np.ndarray, init: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Occupancy ``rho`` (H, S, A) and state marginals ``d`` (H, S) for one group."""
    pi = np.ascontiguousarray(pi, dtype=np.float64)
    P = np.ascontiguousarray(P, dtype=np.float64)
    init = np.ascontiguousarray(init, dtype=np.float64)
    if USE_NUMBA:
        return _forward_nb(pi, P, init)
    return _forward_np(pi, P, init)


def forward_batch(pis: np.ndarray, P: np.ndarray, init: np.ndarray) -> np.ndarray:
    """Occupancy for a stack of policies ``pis`` (n, H, X) -> (n, H, S, A)."""
    n, H, X = pis.shape
    S = P.shape[0]
    rho = np.zeros((n, H, S, 2))
    d = np.broadcast_to(init, (n, S)).copy()
    p1 = np.repeat(pis, 2, axis=2)
    for h in range(H):
        rho[:, h, :, 0] = d * (1.0 - p1[:, h])
        rho[:, h, :, 1] = d * p1[:, h]
        if h + 1 < H:
            d = np.einsum("nsa,sat->nt", rho[:, h], P)
    return rho


# ---------------------------------------------------------------------------
# adjoint gradients of linear functionals of the occupancy measure
# ---------------------------------------------------------------------------


@njit
def _adjoint_nb(pi, P, d, W):
    F, H, S, A = W.shape
    X = pi.shape[1]
    grads = np.zeros((F, H, X))
    lam = np.zeros((F, S))
    nxt = np.zeros((F, S))
    q = np.zeros((F, S, A))
    for h in range(H - 1, -1, -1):
        for f in range(F):
            for s in range(S):
                for a in range(A):
                    acc = W[f, h, s, a]
                    if h + 1 < H:
                        for t in range(S):
                            acc += P[s, a, t] * nxt[f, t]
                    q[f, s, a] = acc
        for f in range(F):
            for s in range(S):
                x = s // 2
                p1 = pi[h, x]
                lam[f, s] = (1.0 - p1) * q[f, s, 0] + p1 * q[f, s, 1]
                grads[f, h, x] += d[h, s] * (q[f, s, 1] - q[f, s, 0])
        for f in range(F):
            for s in range(S):
                nxt[f, s] = lam[f, s]
    return grads


def _adjoint_np(pi, P, d, W):
    F, H, S, A = W.shape
    X = pi.shape[1]
    grads = np.zeros((F, H, X))
    nxt = np.zeros((F, S))
    p1 = np.repeat(pi, 2, axis=1)
    for h in range(H - 1, -1, -1):
        q = W[:, h].copy()
        if h + 1 < H:
            q += np.einsum("sat,ft->fsa", P, nxt)
        nxt = (1.0 - p1[h]) * q[:, :, 0] + p1[h] * q[:, :, 1]
        g = d[h] * (q[:, :, 1] - q[:, :, 0])
        grads[:, h] = g.reshape(F, X, 2).sum(axis=2)
    return grads


def functionals(pi: np.ndarray, P: np.ndarray, init: np.ndarray, W: np.ndarray):
    """Values and exact gradients of ``F_f = sum W[f] * rho``.

    Returns ``(values (F,), grads (F, H, X), rho)``.
    """
    pi = np.ascontiguousarray(pi, dtype=np.float64)
    P = np.ascontiguousarray(P, dtype=np.float64)
    W = np.ascontiguousarray(W, dtype=np.float64)
    rho, d = forward(pi, P, init)
    values = np.einsum("fhsa,hsa->f", W, rho)
    if USE_NUMBA:
        grads = _adjoint_nb(pi, P, d, W)
    else:
        grads = _adjoint_np(pi, P, d, W)
    return values, grads, rho


# ---------------------------------------------------------------------------
# trajectory sampling
# ---------------------------------------------------------------------------


def cdf_table(p: np.ndarray) -> np.ndarray:
    """Row-wise CDFs, pinned to exactly 1.0 from the last positive entry on."""
    p = np.asarray(p, dtype=np.float64)
    c = np.cumsum(p, axis=-1)
    c = c / c[..., -1:]
    last = p.shape[-1] - 1 - np.argmax((p > 0)[..., ::-1], axis=-1)
    idx = np.arange(p.shape[-1])
    c[idx >= last[..., None]] = 1.0
    return np.ascontiguousarray(c)


@njit
def _draw(cdf, u):
    n = cdf.shape[0]
    k = 0
    for j in range(n - 1):
        if cdf[j] <= u:
            k += 1
    return k


@njit(parallel=True)
def _sample_nb(keys, init_cdf, cdf, pi, rmean, family, survival):
    n = keys.shape[0]
    H = pi.shape[0]
    states = np.zeros((n, H), dtype=np.int16)
    actions = np.zeros((n, H), dtype=np.int8)
    rewards = np.zeros((n, H))
    active = np.zeros(n, dtype=np.int16)
    for i in prange(n):
        key = keys[i]
        s = _draw(init_cdf, rng.uniform_scalar(key, 0, 4))
        last = H
        for h in range(H):
            states[i, h] = s
            a = 1 if rng.uniform_scalar(key, h, 0) < pi[h, s // 2] else 0
            actions[i, h] = a
            if family == 1:
                rewards[i, h] = 1.0 if rng.uniform_scalar(key, h, 1) < rmean[s, a] else 0.0
            else:
                rewards[i, h] = rmean[s, a]
            if h + 1 < H:
                if survival < 1.0 and rng.uniform_scalar(key, h, 3) >= survival:
                    last = h + 1
                    break
                s = _draw(cdf[s, a], rng.uniform_scalar(key, h, 2))
        active[i] = last
    return states, actions, rewards, active


def _draw_np(cdf_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    return (cdf_rows[:, :-1] <= u[:, None]).sum(axis=1)


def _sample_np(keys, init_cdf, cdf, pi, rmean, family, survival):
    n = keys.shape[0]
    H = pi.shape[0]
    states = np.zeros((n, H), dtype=np.int16)
    actions = np.zeros((n, H), dtype=np.int8)
    rewards = np.zeros((n, H))
    active = np.full(n, H, dtype=np.int16)
    alive = np.ones(n, dtype=bool)
    s = _draw_np(np.broadcast_to(init_cdf, (n, init_cdf.shape[0])), rng.uniforms(keys, 0, rng.SLOT_INIT))
    for h in range(H):
        idx = np.flatnonzero(alive)
        sk = keys[idx]
        ss = s[idx]
        states[idx, h] = ss
        a = (rng.uniforms(sk, h, rng.SLOT_ACTION) < pi[h, ss // 2]).astype(np.int8)
        actions[idx, h] = a
        if family == REWARD_BERNOULLI:
            rewards[idx, h] = (rng.uniforms(sk, h, rng.SLOT_REWARD) < rmean[ss, a]).astype(np.float64)
        else:
            rewards[idx, h] = rmean[ss, a]
        if h + 1 < H:
            if survival < 1.0:
                out = rng.uniforms(sk, h, rng.SLOT_DROPOUT) >= survival
                active[idx[out]] = h + 1
                alive[idx[out]] = False
                keep = ~out
                idx, sk, ss, a = idx[keep], sk[keep], ss[keep], a[keep]
            s[idx] = _draw_np(cdf[ss, a], rng.uniforms(sk, h, rng.SLOT_NEXT))
    return states, actions, rewards, active


def sample(keys, init, P, pi, rmean, family=REWARD_DETERMINISTIC, survival=1.0):
    """Roll one trajectory per key. Returns (states, actions, rewards, active_until)."""
    keys = np.ascontiguousarray(keys, dtype=np.uint64)
    init_cdf = cdf_table(init)
    cdf = cdf_table(P)
    pi = np.ascontiguousarray(pi, dtype=np.float64)
    rmean = np.ascontiguousarray(rmean, dtype=np.float64)
    if USE_NUMBA:
        return _sample_nb(keys, init_cdf, cdf, pi, rmean, int(family), float(survival))
    return _sample_np(keys, init_cdf, cdf, pi, rmean, int(family), float(survival))


# ---------------------------------------------------------------------------
# count accumulation
# ---------------------------------------------------------------------------


@njit
def _count_nb(states, actions, rewards, active, S, A):
    n, H = states.shape
    visits = np.zeros((S, A), dtype=np.int64)
    trans = np.zeros((S, A, S), dtype=np.int64)
    rsum = np.zeros((S, A))
    for i in range(n):
        last = active[i]
        for h in range(last):
            s = states[i, h]
            a = actions[i, h]
            visits[s, a] += 1
            rsum[s, a] += rewards[i, h]
            if h + 1 < last:
                trans[s, a, states[i, h + 1]] += 1
    return visits, trans, rsum


def _count_np(states, actions, rewards, active, S, A):
    n, H = states.shape
    steps = np.arange(H)
    mask = steps[None, :] < active[:, None]
    sa = states.astype(np.int64) * A + actions
    visits = np.bincount(sa[mask], minlength=S * A).reshape(S, A)
    rsum = np.bincount(sa[mask], weights=rewards[mask], minlength=S * A).reshape(S, A)
    tmask = steps[None, :-1] + 1 < active[:, None]
    sas = sa[:, :-1] * S + states[:, 1:]
    trans = np.bincount(sas[tmask], minlength=S * A * S).reshape(S, A, S)
    return visits.astype(np.int64), trans.astype(np.int64), rsum


def count(states, actions, rewards, active, S: int, A: int = 2):
    """Visit counts, transition counts, and reward sums from one group's trajectories."""
    if USE_NUMBA:
        return _count_nb(states, actions, rewards, active.astype(np.int64), S, A)
    return _count_np(states, actions, rewards, active, S, A)
