"""Online long-run covariance of the score process and plug-in intervals.

The accumulator estimates

    Sigma = sum_k E[x_0 x_k^T e_0 e_k]

with the truncated lag-window estimator

    Sigma_n = 1/n sum_i [ x_i x_i^T g_i^2
                          + sum_{k=1}^{w_i} (x_i x_{i-k}^T + x_{i-k} x_i^T) g_i g_{i-k} ]

where ``w_i = ceil(lam * log i) ^ (i - 1)``. The lagged sums are read off a
ring buffer of partial sums ``S_j = sum_{i<=j} x_i g_i``, so an update costs
O(d^2) and the memory is O(d log n).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.special import ndtri

from .errors import DataError

DEFAULT_LAMBDA = 2.0
DEFAULT_FLOOR = 1e-12


def lag_window(i: int, lam: float) -> int:
    """Number of lag terms used at (1-based) step ``i``."""
    return min(math.ceil(lam * math.log(max(i, 3))), i - 1)


@njit(cache=True, nogil=True)
def _cov_kernel(X, G, sigma, buf, n, lam):
    d = X.shape[1]
    cap = buf.shape[0]
    diff = np.empty(d)
    for k in range(X.shape[0]):
        n += 1
        w = min(math.ceil(lam * math.log(max(n, 3.0))), n - 1)
        prev = (n - 1) % cap
        old = (n - 1 - w) % cap
        for j in range(d):
            diff[j] = buf[prev, j] - buf[old, j]
        g = G[k]
        x = X[k]
        a = (n - 1.0) / n
        c = 1.0 / n
        for i in range(d):
            gxi = g * x[i]
            gdi = g * diff[i]
            for j in range(i, d):
                mij = gxi * x[j] * g + gxi * diff[j] + gdi * x[j]
                mji = g * x[j] * x[i] * g + g * x[j] * diff[i] + g * diff[j] * x[i]
                v = 0.5 * ((a * sigma[i, j] + c * mij) + (a * sigma[j, i] + c * mji))
                sigma[i, j] = v
                sigma[j, i] = v
        cur = n % cap
        for j in range(d):
            buf[cur, j] = buf[prev, j] + g * x[j]
    return n


class LongRunCovariance:
    """Streaming estimator of the long-run score covariance.

    Feed it the same ``(x_i, g_i)`` pairs the estimator produces, in order,
    via :meth:`update` or :meth:`update_many`.
    """

    def __init__(self, d: int, lam: float = DEFAULT_LAMBDA, floor: float = DEFAULT_FLOOR):
        if not lam > 0:
            raise ValueError(f"lam must be positive, got {lam}")
        self.d = int(d)
        self.lam = float(lam)
        self.floor = float(floor)
        self.n = 0
        self.sigma = np.zeros((d, d))
        self._buf = np.zeros((self._capacity_for(64), d))

    def _capacity_for(self, n_max: int) -> int:
        return math.ceil(self.lam * math.log(max(n_max, 3))) + 2

    def _ensure_capacity(self, n_max: int):
        cap = self._capacity_for(n_max)
        old_cap = self._buf.shape[0]
        if cap <= old_cap:
            return
        cap = max(cap, 2 * old_cap)
        new = np.zeros((cap, self.d))
        for j in range(max(0, self.n - old_cap + 1), self.n + 1):
            new[j % cap] = self._buf[j % old_cap]
        self._buf = new

    @property
    def buffer_len(self) -> int:
        """Partial sums the next update can reach (``S_0`` counted)."""
        return min(lag_window(self.n + 1, self.lam), self.n) + 1

    @property
    def partial_sum(self) -> np.ndarray:
        return self._buf[self.n % self._buf.shape[0]].copy()

    def update(self, x, g: float):
        self.update_many(np.reshape(x, (1, -1)), np.array([g], dtype=float))

    def update_many(self, X, G):
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=float)
        G = np.ascontiguousarray(G, dtype=float).reshape(-1)
        if X.shape[1] != self.d or X.shape[0] != G.shape[0]:
            raise DataError(f"shape mismatch: X{X.shape}, g{G.shape}, d={self.d}")
        if not (np.isfinite(X).all() and np.isfinite(G).all()):
            raise DataError("non-finite input to covariance update")
        self._ensure_capacity(self.n + X.shape[0] + 1)
        self.n = int(_cov_kernel(X, G, self.sigma, self._buf, self.n, self.lam))
        return self


@dataclass(frozen=True)
class ConfidenceInterval:
    center: float
    lower: float
    upper: float
    level: float
    sigma_v_sq_raw: float = float("nan")
    floored: bool = False

    @property
    def half_width(self) -> float:
        return 0.5 * (self.upper - self.lower)

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, value: float) -> bool:
        return bool(self.lower <= value <= self.upper)


def normal_quantile(p):
    return ndtri(p)


def sandwich_variance(v, h_inv, sigma) -> float:
    """``v^T H^{-1} Sigma H^{-T} v``."""
    u = np.asarray(v, dtype=float) @ h_inv
    return float(u @ sigma @ u)


def confidence_interval(v, theta_hat, h_inv, cov, n: int, xi: float = 0.05,
                        floor: float | None = None) -> ConfidenceInterval:
    """Plug-in normal interval for ``v @ theta`` at level ``1 - xi``.

    ``cov`` is a :class:`LongRunCovariance` or a bare ``(d, d)`` matrix. The
    half width is ``q_{1-xi/2} * sigma_v / sqrt(n)``; a non-positive
    ``sigma_v^2`` is replaced by the floor and reported through ``floored``.
    """
    if not 0.0 < xi < 1.0:
        raise ValueError(f"xi must lie in (0, 1), got {xi}")
    if n < 2:
        raise ValueError(f"need n >= 2, got {n}")
    if isinstance(cov, LongRunCovariance):
        sigma = cov.sigma
        floor = cov.floor if floor is None else floor
    else:
        sigma = np.asarray(cov, dtype=float)
    floor = DEFAULT_FLOOR if floor is None else floor
    v = np.asarray(v, dtype=float)
    raw = sandwich_variance(v, h_inv, sigma)
    floored = not raw > floor
    var = floor if floored else raw
    center = float(v @ np.asarray(theta_hat, dtype=float))
    hw = float(normal_quantile(1.0 - xi / 2.0)) * math.sqrt(var) / math.sqrt(n)
    return ConfidenceInterval(center, center - hw, center + hw, 1.0 - xi, raw, floored)
