import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ropeval.errors import DataError
from ropeval.longrun import (
    ConfidenceInterval,
    LongRunCovariance,
    confidence_interval,
    lag_window,
    normal_quantile,
    sandwich_variance,
)


def offline_sigma(X, G, lam):
    """Direct evaluation of the truncated lag-window sum over the stored stream."""
    n, d = X.shape
    S = np.zeros((d, d))
    for i in range(1, n + 1):
        xi, gi = X[i - 1], G[i - 1]
        S += np.outer(xi, xi) * gi * gi
        w = min(math.ceil(lam * math.log(max(i, 3))), i - 1)
        for k in range(1, w + 1):
            xk, gk = X[i - 1 - k], G[i - 1 - k]
            S += (np.outer(xi, xk) + np.outer(xk, xi)) * gi * gk
    return S / n


def test_window_law():
    assert lag_window(1, 2.0) == 0
    assert lag_window(2, 2.0) == 1
    assert lag_window(10_000, 2.0) == math.ceil(2 * math.log(10_000))
    assert lag_window(10_000, 2.0) == 19


def test_first_update():
    cov = LongRunCovariance(2)
    cov.update([1.0, 2.0], 3.0)
    np.testing.assert_allclose(cov.sigma, 9 * np.outer([1, 2], [1, 2]))
    np.testing.assert_allclose(cov.partial_sum, [3.0, 6.0])


@pytest.mark.parametrize("lam", [1.0, 2.0, 4.0])
def test_offline_equality(rng, lam):
    n, d = 700, 3
    X = rng.standard_normal((n, d))
    G = rng.standard_normal(n)
    cov = LongRunCovariance(d, lam)
    for i in range(n):
        cov.update(X[i], G[i])
        if i + 1 in (1, 2, 3, 10, 99, 700):
            assert np.abs(cov.sigma - offline_sigma(X[: i + 1], G[: i + 1], lam)).max() <= 1e-10


def test_alternating_scores():
    n = 2000
    G = np.array([(-1.0) ** i for i in range(n)])
    X = np.ones((n, 1))
    cov = LongRunCovariance(1, 2.0)
    cov.update_many(X, G)
    assert cov.sigma[0, 0] == pytest.approx(offline_sigma(X, G, 2.0)[0, 0], abs=1e-10)


def test_iid_signs_long_run_variance():
    ok = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        G = rng.choice([-1.0, 1.0], 100_000)
        cov = LongRunCovariance(1, 2.0)
        cov.update_many(np.ones((G.size, 1)), G)
        ok += abs(cov.sigma[0, 0] - 1.0) <= 0.05
    assert ok >= 18


def test_ring_buffer_growth_keeps_history(rng):
    # grow the buffer mid-stream by feeding one row at a time, then in a block
    X = rng.standard_normal((3000, 2))
    G = rng.standard_normal(3000)
    a = LongRunCovariance(2, 4.0)
    for i in range(3000):
        a.update(X[i], G[i])
    b = LongRunCovariance(2, 4.0)
    b.update_many(X[:5], G[:5])
    b.update_many(X[5:], G[5:])
    np.testing.assert_allclose(a.sigma, b.sigma, atol=1e-12)
    np.testing.assert_allclose(a.sigma, offline_sigma(X, G, 4.0), atol=1e-10)


def test_buffer_len():
    cov = LongRunCovariance(1, 2.0)
    assert cov.buffer_len == 1
    cov.update_many(np.ones((500, 1)), np.ones(500))
    assert cov.buffer_len == min(lag_window(501, 2.0), 500) + 1


def test_symmetry(rng):
    cov = LongRunCovariance(4, 2.0)
    for _ in range(50):
        cov.update_many(rng.standard_normal((7, 4)), rng.standard_normal(7))
        assert (cov.sigma == cov.sigma.T).all()


def test_input_validation():
    cov = LongRunCovariance(2)
    with pytest.raises(DataError):
        cov.update([1.0, np.nan], 1.0)
    with pytest.raises(DataError):
        cov.update([1.0], 1.0)
    with pytest.raises(ValueError):
        LongRunCovariance(2, lam=0.0)


# intervals ----------------------------------------------------------------------

def test_quantile():
    assert normal_quantile(0.975) == pytest.approx(1.95996398454005424, abs=1e-12)
    assert normal_quantile(0.5) == 0.0


def test_interval_hand_example():
    ci = confidence_interval([1.0], [0.3], np.eye(1), np.array([[4.0]]), 400, 0.05)
    assert ci.half_width == pytest.approx(0.195996398454005424, abs=1e-12)
    assert ci.center == 0.3 and ci.level == 0.95 and not ci.floored


def test_zero_direction_is_floored():
    cov = LongRunCovariance(2)
    cov.update([1.0, 1.0], 1.0)
    ci = confidence_interval([0.0, 0.0], [1.0, 2.0], np.eye(2), cov, 100)
    assert ci.center == 0.0 and ci.floored
    assert ci.half_width == pytest.approx(normal_quantile(0.975) * 1e-6 / 10)


def test_negative_variance_is_floored():
    ci = confidence_interval([1.0], [0.0], np.eye(1), np.array([[-2.0]]), 10)
    assert ci.floored and ci.sigma_v_sq_raw == -2.0 and ci.half_width > 0


def test_interval_validation():
    with pytest.raises(ValueError):
        confidence_interval([1.0], [0.0], np.eye(1), np.eye(1), 1)
    with pytest.raises(ValueError):
        confidence_interval([1.0], [0.0], np.eye(1), np.eye(1), 10, xi=1.0)


def test_sandwich(rng):
    A = rng.standard_normal((3, 3))
    S = np.cov(rng.standard_normal((3, 20)))
    v = rng.standard_normal(3)
    assert sandwich_variance(v, A, S) == pytest.approx(v @ A @ S @ A.T @ v)


@given(st.floats(0.001, 0.5), st.floats(0.001, 0.5))
def test_width_increases_with_level(x1, x2):
    sig = np.array([[2.0, 0.3], [0.3, 1.0]])
    a = confidence_interval([1.0, -1.0], [0.0, 0.0], np.eye(2), sig, 50, x1)
    b = confidence_interval([1.0, -1.0], [0.0, 0.0], np.eye(2), sig, 50, x2)
    if x1 <= x2:
        assert a.half_width >= b.half_width
    if x1 < x2 - 1e-9:
        assert a.half_width > b.half_width


@given(st.integers(1, 60), st.floats(0.5, 5.0), st.integers(0, 2**31))
def test_offline_equality_property(n, lam, seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 2))
    G = rng.standard_cauchy(n)
    cov = LongRunCovariance(2, lam)
    cov.update_many(X, G)
    ref = offline_sigma(X, G, lam)
    assert np.abs(cov.sigma - ref).max() <= 1e-10 * max(1.0, np.abs(ref).max())


def test_interval_dataclass():
    ci = ConfidenceInterval(1.0, 0.5, 1.5, 0.9)
    assert ci.width == 1.0 and ci.contains(1.5) and not ci.contains(1.6)
