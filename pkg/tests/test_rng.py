import numpy as np

from geodp import rng


def test_pure_function_of_indices():
    a = rng.standard_normal(7, 3, 11, 0)
    b = rng.standard_normal(7, 3, 11, 0)
    assert a == b
    # distinct indices give distinct draws
    assert rng.standard_normal(7, 3, 12, 0) != a
    assert rng.standard_normal(8, 3, 11, 0) != a


def test_increments_shape_and_scale():
    dt = 1.0 / 64
    z = rng.normal_increments(1, 64, 4096, 2, dt)
    assert z.shape == (64, 4096, 2)
    # marginal moments of N(0, dt)
    assert abs(np.mean(z)) < 4.0 * np.sqrt(dt / z.size)
    assert abs(np.var(z) - dt) < 5e-4
    # no wild tails / NaNs
    assert np.all(np.isfinite(z))
    assert np.max(np.abs(z)) < 8.0 * np.sqrt(dt)


def test_antithetic_pairing():
    z = rng.normal_increments(42, 8, 64, 3, 0.25, antithetic=True)
    np.testing.assert_allclose(z[:, 1::2], -z[:, 0::2])
    # even paths reproduce the base stream of half the size
    base = rng.normal_increments(42, 8, 32, 3, 0.25)
    np.testing.assert_allclose(z[:, 0::2], base)


def test_partition_independence():
    """Each draw depends only on its own index, not on array extents."""
    big = rng.normal_increments(5, 16, 100, 2, 0.1)
    small = rng.normal_increments(5, 16, 60, 2, 0.1)
    np.testing.assert_array_equal(big[:, :60], small)


def test_derive_seed_deterministic_and_spread():
    s1 = rng.derive_seed(12345, 0)
    s2 = rng.derive_seed(12345, 1)
    assert s1 == rng.derive_seed(12345, 0)
    assert s1 != s2
    assert rng.derive_seed(12345, 0, 1) != rng.derive_seed(12345, 1, 0)


def test_normality_rough():
    z = rng.normal_increments(9, 1, 200_000, 1, 1.0)[0, :, 0]
    # skewness and excess kurtosis near 0 at this sample size
    assert abs(np.mean(z**3)) < 0.05
    assert abs(np.mean(z**4) - 3.0) < 0.1
