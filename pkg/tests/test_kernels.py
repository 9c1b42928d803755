"""Numba and numpy code paths must agree; both are exercised whatever the env flag says."""
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fairrl import _accel, datagen, kernels, rng

pytestmark = pytest.mark.skipif(not _accel.HAS_NUMBA, reason="numba not installed")


def _pyfunc(f):
    return getattr(f, "py_func", f)


@given(st.integers(0, 10_000))
def test_forward_backends_agree(seed):
    spec = datagen.random_spec(seed, features=4, horizon=6)
    pi = np.random.default_rng(seed).uniform(size=(6, 4))
    P, init = spec.kernel.probs[0], spec.kernel.initial[0]
    rho_a, d_a = kernels._forward_nb(pi, P, init)
    rho_b, d_b = kernels._forward_np(pi, P, init)
    np.testing.assert_allclose(rho_a, rho_b, atol=1e-15)
    np.testing.assert_allclose(kernels.forward_batch(pi[None], P, init)[0], rho_a, atol=1e-15)


@given(st.integers(0, 10_000))
def test_adjoint_backends_agree(seed):
    spec = datagen.random_spec(seed, features=3, horizon=5)
    rs = np.random.default_rng(seed)
    pi = rs.uniform(size=(5, 3))
    W = rs.normal(size=(4, 5, 6, 2))
    P, init = spec.kernel.probs[0], spec.kernel.initial[0]
    _, d = kernels._forward_np(pi, P, init)
    np.testing.assert_allclose(kernels._adjoint_nb(pi, P, d, W), kernels._adjoint_np(pi, P, d, W), atol=1e-13)


@pytest.mark.parametrize("family,survival", [(0, 1.0), (1, 1.0), (1, 0.8)])
def test_sampler_backends_identical(family, survival):
    spec = datagen.build_fico()
    pi = np.random.default_rng(1).uniform(size=(8, 5))
    keys = rng.stream_keys(3, 1, np.arange(5000) // 100, np.arange(5000) % 100)
    args = (keys, kernels.cdf_table(spec.kernel.initial[0]), kernels.cdf_table(spec.kernel.probs[0]), pi,
            spec.reward.mean[0], family, survival)
    a = kernels._sample_nb(*args)
    b = kernels._sample_np(*args)
    for x, y in zip(a, b):
        assert x.dtype == y.dtype
        np.testing.assert_array_equal(x, y)


def test_counter_backends_identical():
    spec = datagen.build_synthetic()
    pi = np.full((8, 5), 0.5)
    keys = rng.stream_keys(0, 0, np.zeros(3000), np.arange(3000))
    s, a, r, act = kernels.sample(keys, spec.kernel.initial[0], spec.kernel.probs[0], pi, spec.reward.mean[0], 1, 0.9)
    nb = kernels._count_nb(s, a, r, act, 10, 2)
    npy = kernels._count_np(s, a, r, act, 10, 2)
    for x, y in zip(nb, npy):
        np.testing.assert_array_equal(x, y)


def test_scalar_and_vector_uniforms_agree():
    keys = rng.stream_keys(42, 0, np.arange(100), np.arange(100))
    vec = rng.uniforms(keys, 3, rng.SLOT_NEXT)
    sc = np.array([rng.uniform_scalar(k, 3, rng.SLOT_NEXT) for k in keys])
    np.testing.assert_array_equal(vec, sc)
    assert np.all((vec >= 0) & (vec < 1))


def test_cdf_pins_trailing_zeros():
    c = kernels.cdf_table(np.array([0.2, 0.8, 0.0]))
    np.testing.assert_array_equal(c, [0.2, 1.0, 1.0])
    assert _pyfunc(kernels._draw)(c, 0.999999) == 1
