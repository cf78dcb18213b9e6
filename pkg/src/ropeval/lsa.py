"""Averaged linear stochastic approximation (TD(0)) with online multiplier bootstrap.

Comparison baseline. The main iterate follows

    theta <- theta - alpha * n**(-eta) * x * (z @ theta - b)

and ``B`` bootstrap replicates follow the same recursion with the step scaled
by i.i.d. nonnegative multipliers ``W`` (mean 1, variance 1). Confidence
intervals come from the spread of the replicates' Polyak averages.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .errors import DataError, IntervalError
from .estimator import as_arrays
from .longrun import ConfidenceInterval

DIVERGENCE_LIMIT = 1e12
_CHUNK = 4096


def exponential_weights(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.standard_exponential(shape)


def unit_weights(rng: np.random.Generator, shape) -> np.ndarray:
    """Degenerate multipliers (all ones); replicates then track the main iterate."""
    return np.ones(shape)


@njit(cache=True, nogil=True)
def _lsa_kernel(X, Z, B, W, theta, theta_avg, reps, reps_avg, n, alpha, eta):
    d = X.shape[1]
    n_boot = reps.shape[0]
    for k in range(X.shape[0]):
        n += 1.0
        step = alpha * n ** (-eta)
        x = X[k]
        z = Z[k]
        r = -B[k]
        for j in range(d):
            r += z[j] * theta[j]
        for j in range(d):
            theta[j] -= step * x[j] * r
            theta_avg[j] += (theta[j] - theta_avg[j]) / n
        for m in range(n_boot):
            rm = -B[k]
            for j in range(d):
                rm += z[j] * reps[m, j]
            c = step * W[k, m] * rm
            for j in range(d):
                reps[m, j] -= c * x[j]
                reps_avg[m, j] += (reps[m, j] - reps_avg[m, j]) / n
    return n


class LsaEstimator:
    """Averaged TD with ``b_boot`` multiplier-bootstrap replicates.

    Parameters
    ----------
    d : int
        Parameter dimension.
    alpha, eta : float
        Step size ``alpha * n**(-eta)``.
    b_boot : int
        Number of bootstrap replicates (0 disables the bootstrap).
    seed : int
        Seed of the multiplier generator.
    weight_sampler : callable
        ``(rng, shape) -> array`` of multipliers; exponential by default.
    """

    def __init__(self, d: int, alpha: float = 0.5, eta: float = 2.0 / 3.0, b_boot: int = 200,
                 seed: int = 0, theta0=None, weight_sampler=exponential_weights):
        if alpha < 0:
            raise ValueError(f"alpha must be nonnegative, got {alpha}")
        if not 0.0 < eta <= 1.0:
            raise ValueError(f"eta must lie in (0, 1], got {eta}")
        self.d = int(d)
        self.alpha = float(alpha)
        self.eta = float(eta)
        self.b_boot = int(b_boot)
        self.n = 0
        self.theta = np.zeros(d) if theta0 is None else np.array(theta0, dtype=float)
        self.theta_avg = self.theta.copy()
        self.replicates = np.tile(self.theta, (self.b_boot, 1))
        self.replicate_avgs = self.replicates.copy()
        self.weight_sampler = weight_sampler
        self._rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, 11])))
        self.divergent = False

    def update(self, X, Z, B):
        X, Z, B = as_arrays((np.atleast_2d(X), np.atleast_2d(Z), np.atleast_1d(B)))
        if X.shape[1] != self.d:
            raise DataError(f"observation dimension {X.shape[1]} != {self.d}")
        with np.errstate(over="ignore", invalid="ignore"):
            for lo in range(0, X.shape[0], _CHUNK):
                hi = min(lo + _CHUNK, X.shape[0])
                W = np.ascontiguousarray(self.weight_sampler(self._rng, (hi - lo, self.b_boot)), dtype=float)
                self.n = int(_lsa_kernel(X[lo:hi], Z[lo:hi], B[lo:hi], W, self.theta, self.theta_avg,
                                         self.replicates, self.replicate_avgs, float(self.n),
                                         self.alpha, self.eta))
        norm = np.linalg.norm(self.theta)
        if not norm <= DIVERGENCE_LIMIT:
            self.divergent = True
        return self

    def step(self, x, z, b):
        return self.update(np.reshape(x, (1, -1)), np.reshape(z, (1, -1)), np.array([b], dtype=float))

    def estimate(self) -> np.ndarray:
        return self.theta_avg.copy()

    def confidence_interval(self, v, xi: float = 0.05) -> ConfidenceInterval:
        """Basic bootstrap interval from the centred replicate averages.

        ``[v@theta_avg - q_hi, v@theta_avg - q_lo]`` with ``q`` the empirical
        ``1 - xi/2`` and ``xi/2`` quantiles of ``v @ (avg_r - theta_avg)``.
        """
        if self.b_boot < 50:
            raise ValueError(f"bootstrap intervals need b_boot >= 50, got {self.b_boot}")
        v = np.asarray(v, dtype=float)
        center = float(v @ self.theta_avg)
        dev = self.replicate_avgs @ v - center
        if not np.isfinite(center) or np.isfinite(dev).sum() < self.b_boot:
            raise IntervalError("non-finite bootstrap replicates; the LSA run diverged")
        q_lo, q_hi = np.quantile(dev, [xi / 2.0, 1.0 - xi / 2.0])
        return ConfidenceInterval(center, float(center - q_hi), float(center - q_lo), 1.0 - xi)
