import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_spec
from fairrl import datagen
from fairrl.envsim import EmptyGroupError, sample_episode, sample_episodes
from fairrl.mdp import Policy, forward_occupancy, action_marginal


def test_deterministic_kernel_and_policy_force_the_path():
    S = 4
    P = np.zeros((S, 2, S))
    for s in range(S):
        P[s, 0, (s + 1) % S] = 1.0
        P[s, 1, (s + 2) % S] = 1.0
    spec = make_spec(P, [0, 1, 0, 0], np.zeros((S, 2)), horizon=4)
    pi = np.array([[[1.0, 0.0], [0.0, 1.0], [0.0, 1.0], [0.0, 1.0]]])
    batch = sample_episode(spec, Policy(pi), 3, seed=1)
    r = batch.rollouts[0]
    # s=1 (x=0) accept -> 3 (x=1) accept -> 1 (x=0) reject -> 2 (x=1) accept
    np.testing.assert_array_equal(r.states, [[1, 3, 1, 2]] * 3)
    np.testing.assert_array_equal(r.actions, [[1, 1, 0, 1]] * 3)


def test_no_dropout_means_full_trajectories(synthetic):
    batch = sample_episode(synthetic, Policy.constant(2, 8, 5, 0.5), 50, seed=2, survival=1.0)
    for g in range(2):
        assert np.all(batch.rollouts[g].active == 8)
        assert all(t.active_until == 8 and len(t.states) == 8 for t in batch.trajectories(g))


def test_step_one_action_frequency(synthetic):
    pol = Policy(np.random.default_rng(3).uniform(size=(2, 8, 5)))
    occ = forward_occupancy(pol, synthetic.kernel)
    n = 100_000
    batch = sample_episode(synthetic, pol, n, seed=3)
    for g in range(2):
        p = action_marginal(occ, g, 1)
        assert abs(batch.rollouts[g].actions[:, 0].mean() - p) <= 3 * np.sqrt(p * (1 - p) / n)


def test_same_seed_same_bytes(fico):
    pol = Policy.constant(2, 8, 5, 0.4)
    a = sample_episodes(fico, pol, 1, 20, 7, seed=9, survival=0.9)
    b = sample_episodes(fico, pol, 1, 20, 7, seed=9, survival=0.9)
    c = sample_episodes(fico, pol, 1, 20, 7, seed=10, survival=0.9)
    for ra, rb in zip(a.rollouts, b.rollouts):
        for f in ("states", "actions", "rewards", "active"):
            assert getattr(ra, f).tobytes() == getattr(rb, f).tobytes()
    assert a.rollouts[0].states.tobytes() != c.rollouts[0].states.tobytes()


@given(st.integers(1, 19))
def test_batch_split_does_not_change_draws(split):
    spec = datagen.build_synthetic()
    pol = Policy.constant(2, 8, 5, 0.5)
    whole = sample_episodes(spec, pol, 1, 20, 3, seed=4, survival=0.8)
    left = sample_episodes(spec, pol, 1, split, 3, seed=4, survival=0.8)
    right = sample_episodes(spec, pol, 1 + split, 20 - split, 3, seed=4, survival=0.8)
    for g in range(2):
        joined = np.concatenate([left.rollouts[g].states, right.rollouts[g].states])
        np.testing.assert_array_equal(whole.rollouts[g].states, joined)


def test_transition_frequencies_pass_chi_square(fico):
    pol = Policy.constant(2, 8, 5, 0.5)
    batch = sample_episode(fico, pol, 100_000, seed=5)
    r = batch.rollouts[0]
    s, a, nxt = r.states[:, :-1].ravel(), r.actions[:, :-1].ravel(), r.states[:, 1:].ravel()
    S = fico.S
    for si in range(S):
        for ai in range(2):
            sel = (s == si) & (a == ai)
            n = sel.sum()
            if n < 1000:
                continue
            obs = np.bincount(nxt[sel], minlength=S)
            exp = n * fico.kernel.probs[0, si, ai]
            m = exp > 0
            assert obs[~m].sum() == 0
            stat = ((obs[m] - exp[m]) ** 2 / exp[m]).sum()
            dof = m.sum() - 1
            assert stat < dof + 6 * np.sqrt(2 * dof)


def test_dropout_truncates_and_keeps_someone(synthetic):
    batch = sample_episodes(synthetic, Policy.constant(2, 8, 5, 0.5), 1, 30, 5, seed=6, survival=0.7)
    for g in range(2):
        r = batch.rollouts[g]
        assert np.any(r.active < 8)
        for e in range(1, 31):
            assert np.any(r.active[r.episodes == e] == 8)
        for t in batch.trajectories(g):
            assert len(t.states) == t.active_until


def test_dropout_that_always_empties_raises(synthetic):
    with pytest.raises(EmptyGroupError):
        sample_episode(synthetic, Policy.constant(2, 8, 5, 0.5), 1, seed=7, survival=0.01)


def test_invalid_arguments(synthetic):
    pol = Policy.constant(2, 8, 5, 0.5)
    with pytest.raises(ValueError):
        sample_episode(synthetic, pol, 0, seed=1)
    with pytest.raises(ValueError):
        sample_episode(synthetic, pol, 2, seed=1, survival=0.0)


def test_csv_dump(tmp_path, synthetic):
    batch = sample_episode(synthetic, Policy.constant(2, 8, 5, 0.5), 2, seed=8, episode=3)
    path = tmp_path / "traj.csv"
    batch.to_csv(path)
    rows = list(csv.DictReader(open(path)))
    assert list(rows[0]) == ["episode", "group", "individual", "h", "x", "y", "a", "reward", "active"]
    assert len(rows) == 2 * 2 * 8
    assert {r["episode"] for r in rows} == {"3"}
