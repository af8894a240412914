import numpy as np
import pytest

from emcbo.rng import NoiseTable, bridge_value, derive_key


@pytest.fixture
def table():
    return NoiseTable(seed=42, n_particles=8, n_steps=16, dim=3, dt=0.01)


def test_increment_deterministic(table):
    a = table.increment(3, 7)
    b = NoiseTable(42, 8, 16, 3, 0.01).increment(3, 7)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (3,)


def test_access_order_independent(table):
    whole = table.block(0, 16)
    singles = np.array([[table.increment(i, k) for i in range(8)] for k in reversed(range(16))])[::-1]
    np.testing.assert_array_equal(whole, singles)
    np.testing.assert_array_equal(table.block(5, 9), whole[5:9])


def test_values_independent_of_table_extent(table):
    bigger = NoiseTable(42, 1000, 500, 3, 0.01)
    np.testing.assert_array_equal(bigger.block(0, 16, 8), table.block(0, 16))


def test_index_errors(table):
    with pytest.raises(IndexError):
        table.increment(8, 0)
    with pytest.raises(IndexError):
        table.increment(0, 16)
    with pytest.raises(IndexError):
        table.increment(-1, 0)


def test_seeds_differ():
    a = NoiseTable(1, 4, 4, 2, 0.1).block(0, 4)
    b = NoiseTable(2, 4, 4, 2, 0.1).block(0, 4)
    assert not np.any(a == b)


def _draws(dt, n_particles=1000, n_steps=1000, dim=2, seed=9):
    return NoiseTable(seed, n_particles, n_steps, dim, dt).block(0, n_steps).reshape(-1, dim)


def test_mean_and_variance_1e6():
    dt = 0.01
    z = _draws(dt)
    assert z.shape[0] == 10**6
    np.testing.assert_array_less(np.abs(z.mean(axis=0)), 4 * np.sqrt(dt / 1e6))
    np.testing.assert_allclose(z.var(axis=0), dt, rtol=0.01)


def test_cross_particle_correlation():
    inc = NoiseTable(5, 2, 10**6, 1, 1.0).block(0, 10**6)[:, :, 0]
    r = np.corrcoef(inc[:, 0], inc[:, 1])[0, 1]
    assert abs(r) < 0.01


def test_refine_identity(table):
    assert table.refine(1) is table


def test_refine_sums_to_coarse(table):
    for m in (2, 3, 5):
        fine = table.refine(m)
        assert fine.n_steps == 16 * m
        assert fine.dt == pytest.approx(0.01 / m)
        sums = fine.block(0, fine.n_steps).reshape(16, m, 8, 3).sum(axis=1)
        np.testing.assert_allclose(sums, table.block(0, 16), rtol=0, atol=1e-15)


def test_refine_chain_sums_to_root(table):
    fine = table.refine(2).refine(2).refine(2)
    sums = fine.block(0, fine.n_steps).reshape(16, 8, 8, 3).sum(axis=1)
    np.testing.assert_allclose(sums, table.block(0, 16), rtol=0, atol=1e-15)


def test_refine_partial_blocks_consistent(table):
    fine = table.refine(4)
    full = fine.block(0, fine.n_steps)
    np.testing.assert_array_equal(fine.block(3, 22), full[3:22])
    np.testing.assert_array_equal(fine.increment(2, 13), full[13, 2])


def test_refined_variance_1e6():
    coarse = NoiseTable(3, 1000, 500, 1, 0.02)
    fine = coarse.refine(2)
    z = fine.block(0, fine.n_steps).reshape(-1)
    assert z.size == 10**6
    assert z.var() == pytest.approx(0.01, rel=0.02)
    # neighbouring fine increments within one coarse step are uncorrelated
    pairs = fine.block(0, fine.n_steps).reshape(500, 2, 1000)
    r = np.corrcoef(pairs[:, 0].ravel(), pairs[:, 1].ravel())[0, 1]
    assert abs(r) < 0.01


def test_refine_overflow():
    t = NoiseTable(0, 1, 2**61, 1, 1.0)
    with pytest.raises(OverflowError):
        t.refine(4)
    with pytest.raises(ValueError):
        t.refine(0)


@pytest.mark.parametrize("q", [2, 4])
def test_moment_scaling(q):
    # E|W_t - W_s|^q scales as (t - s)^(q/2); compare two coupled step sizes
    dim = 2
    coarse = NoiseTable(17, 10**5, 1, dim, 0.04)
    fine = coarse.refine(4)
    c = np.linalg.norm(coarse.block(0, 1)[0], axis=1)
    f = np.linalg.norm(fine.block(0, 1)[0], axis=1)
    ratio = np.mean(c**q) / np.mean(f**q)
    assert ratio == pytest.approx(4 ** (q / 2), rel=0.10)


def test_bridge_value_endpoints_and_law():
    dw = np.full((20000, 1), 0.3)
    key = derive_key(1, 2)
    np.testing.assert_allclose(bridge_value(dw, 0.1, 0.1, key), dw)
    np.testing.assert_allclose(bridge_value(dw, 0.1, 0.0, key), 0.0)
    w = bridge_value(dw, 0.1, 0.05, key)
    assert w.mean() == pytest.approx(0.15, abs=0.002)
    assert w.var() == pytest.approx(0.05 * 0.05 / 0.1, rel=0.03)
