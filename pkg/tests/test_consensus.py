import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emcbo.consensus import consensus_point


def _oracle(x, e, alpha):
    """Unshifted weighted mean in 50-digit arithmetic."""
    with mpmath.workdps(50):
        w = [mpmath.exp(-mpmath.mpf(alpha) * mpmath.mpf(float(v))) for v in e]
        s = mpmath.fsum(w)
        return np.array([float(mpmath.fsum(wi * mpmath.mpf(float(xi[j])) for wi, xi in zip(w, x)) / s)
                         for j in range(x.shape[1])])


def test_single_atom():
    res = consensus_point([[1.0, 2.0]], [123.4], alpha=7.0)
    np.testing.assert_array_equal(res.point, [1.0, 2.0])
    assert res.max_weight == 1.0
    assert res.laplace_value == 123.4


def test_equal_energies_give_mean():
    res = consensus_point([[0.0, 0.0], [2.0, 0.0]], [5.0, 5.0], alpha=3.0)
    np.testing.assert_array_equal(res.point, [1.0, 0.0])
    assert res.max_weight == 0.5


def test_three_particle_example():
    res = consensus_point([[0.0], [1.0], [2.0]], [0.0, 1.0, 2.0], alpha=1.0)
    assert res.point[0] == pytest.approx(0.42478961739555857, abs=1e-12)
    assert res.point[0] == pytest.approx(_oracle(np.array([[0.0], [1.0], [2.0]]), [0, 1, 2], 1.0)[0], abs=1e-15)


def test_large_alpha_collapses_to_argmin():
    x = np.array([[0.0, 1.0], [3.0, -2.0], [1.0, 1.0]])
    res = consensus_point(x, [0.3, 0.1, 0.2], alpha=1e6)
    np.testing.assert_allclose(res.point, x[1], atol=1e-6)
    assert res.max_weight == pytest.approx(1.0)


def test_matches_unshifted_formula():
    gen = np.random.default_rng(0)
    x = gen.normal(size=(30, 3))
    e = gen.uniform(0, 2, size=30)
    res = consensus_point(x, e, alpha=5.0)
    w = np.exp(-5.0 * e)
    naive = (w[:, None] * x).sum(axis=0) / w.sum()
    np.testing.assert_allclose(res.point, naive, rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose(res.point, _oracle(x, e, 5.0), rtol=1e-13, atol=1e-15)


def test_no_overflow_at_extreme_alpha():
    # exp(-alpha * E) underflows to 0 for every particle without the shift
    x = np.array([[1.0], [2.0], [4.0]])
    res = consensus_point(x, [1000.0, 1000.5, 1001.0], alpha=10.0)
    np.testing.assert_allclose(res.point, _oracle(x, [1000.0, 1000.5, 1001.0], 10.0), rtol=1e-13)


def test_errors():
    with pytest.raises(ValueError, match="empty"):
        consensus_point(np.empty((0, 2)), np.empty(0), 1.0)
    with pytest.raises(ValueError, match="non-finite"):
        consensus_point([[0.0], [1.0]], [0.0, np.nan], 1.0)


instances = st.tuples(st.integers(1, 64), st.integers(1, 8), st.integers(0, 2**32 - 1))


def _instance(n, d, seed):
    gen = np.random.default_rng(seed)
    x = gen.normal(scale=10, size=(n, d))
    e = gen.uniform(-5, 5, size=n)
    alpha = 10 ** gen.uniform(-2, 4)
    return x, e, alpha


@settings(max_examples=200, deadline=None)
@given(instances)
def test_convex_hull(inst):
    x, e, alpha = _instance(*inst)
    p = consensus_point(x, e, alpha).point
    assert np.all(p >= x.min(axis=0)) and np.all(p <= x.max(axis=0))


@settings(max_examples=200, deadline=None)
@given(instances)
def test_laplace_sandwich(inst):
    x, e, alpha = _instance(*inst)
    res = consensus_point(x, e, alpha)
    n = len(e)
    assert e.min() <= res.laplace_value <= e.min() + math.log(n) / alpha
    assert 0 <= res.log_partition <= math.log(n) + 1e-15
    assert 0 < res.max_weight <= 1


@settings(max_examples=200, deadline=None)
@given(instances, st.integers(-10**6, 10**6))
def test_shift_invariance_exact(inst, c):
    # dyadic energies keep E + c exact, so the result must be bit-identical
    x, e, alpha = _instance(*inst)
    e = np.round(e * 2**20) / 2**20
    a = consensus_point(x, e, alpha).point
    b = consensus_point(x, e + c, alpha).point
    np.testing.assert_array_equal(a, b)


@settings(max_examples=200, deadline=None)
@given(instances)
def test_permutation_invariance(inst):
    x, e, alpha = _instance(*inst)
    perm = np.random.default_rng(inst[2] + 1).permutation(len(e))
    np.testing.assert_array_equal(consensus_point(x, e, alpha).point, consensus_point(x[perm], e[perm], alpha).point)


def test_stability_under_perturbation():
    # |x_a - x_a'| <= C delta with an empirically fitted C
    gen = np.random.default_rng(4)
    x = gen.uniform(-1, 1, size=(32, 2))
    energy = lambda z: 0.5 * np.sum(z**2, axis=1)
    base = consensus_point(x, energy(x), 5.0).point
    ratios = []
    for delta in (1e-3, 1e-4, 1e-5):
        y = x + gen.uniform(-delta, delta, size=x.shape)
        moved = consensus_point(y, energy(y), 5.0).point
        ratios.append(np.linalg.norm(moved - base) / delta)
    assert max(ratios) < 10
    assert max(ratios) / min(ratios) < 10
