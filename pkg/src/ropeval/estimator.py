"""Robust online Newton-type TD estimator (ROPE).

Observations are triples ``(x, z, b)`` with ``x = phi(s_i)``,
``z = phi(s_i) - gamma * phi(s_{i+1})`` and ``b`` the observed reward. The
estimator tracks the root of ``E[x * g_tau(z @ theta - b)] = 0`` with

    theta_hat_n = theta_bar_n - H_n^{-1} G_n

where ``theta_bar`` averages past iterates, ``G`` averages the pseudo-Huber
scores and ``H`` averages ``x z^T g'_tau``. ``H^{-1}`` is maintained by a
rank-one Sherman-Morrison recursion, so memory and per-step cost are O(d^2).
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from numba import njit

from .errors import DataError, InitializationError, InsufficientDataError
from .huber import (
    ThresholdSchedule,
    _tau_kernel,
    pseudo_huber_grad,
    pseudo_huber_grad2,
    score_and_slope,
    tau_at,
)

DEFAULT_N0 = 100
DEFAULT_REFRESH_PERIOD = 4096
_COND_LIMIT = 1e12
_BREAKDOWN = 1e-12


class Observation(NamedTuple):
    x: np.ndarray
    z: np.ndarray
    b: float


def as_arrays(batch):
    """Stack a sequence of observations (or an ``(X, Z, b)`` triple) into arrays."""
    if isinstance(batch, tuple) and len(batch) == 3 and np.ndim(batch[0]) == 2:
        X, Z, B = batch
    else:
        batch = list(batch)
        if not batch:
            raise InsufficientDataError("empty batch")
        X = np.array([o[0] for o in batch], dtype=float)
        Z = np.array([o[1] for o in batch], dtype=float)
        B = np.array([o[2] for o in batch], dtype=float)
    X = np.ascontiguousarray(X, dtype=float)
    Z = np.ascontiguousarray(Z, dtype=float)
    B = np.ascontiguousarray(B, dtype=float).reshape(-1)
    if X.ndim != 2 or X.shape != Z.shape or B.shape[0] != X.shape[0]:
        raise DataError(f"inconsistent shapes X{X.shape} Z{Z.shape} b{B.shape}")
    if X.shape[1] < 1:
        raise DataError("observations must have dimension d >= 1")
    if not (np.isfinite(X).all() and np.isfinite(Z).all() and np.isfinite(B).all()):
        raise DataError("observations contain non-finite entries")
    return X, Z, B


def _residual(X, Z, B, theta, tau):
    r = Z @ theta - B
    return X.T @ pseudo_huber_grad(r, tau), r


def warm_start(batch, tau0: float, max_iter: int = 100, tol: float = 1e-10):
    """Solve ``sum_i x_i g_tau0(z_i @ theta - b_i) = 0`` on a fixed batch.

    Damped Newton: the step is halved until the residual norm decreases. The
    iteration starts from the least-squares root and follows a continuation
    in ``tau`` (halving from the scale of the initial residuals down to
    ``tau0``), which keeps the iterate away from the region where all
    scores saturate. When the Jacobian's condition number exceeds 1e12 a
    ridge of ``1e-8 * ||J||_F`` is added; if that does not rescue it an
    :class:`InitializationError` is raised.

    Returns
    -------
    theta : ndarray of shape (d,)
        Best iterate found.
    converged : bool
        Whether ``||F(theta)||_2 <= tol * n0`` was reached at ``tau0``.
    """
    X, Z, B = as_arrays(batch)
    n0, d = X.shape
    if n0 < d:
        raise InsufficientDataError(f"warm start needs n0 >= d, got n0={n0}, d={d}")
    if not tau0 > 0:
        raise ValueError(f"tau0 must be positive, got {tau0}")

    theta = np.linalg.solve(_rescue(X.T @ Z), X.T @ B)
    scale = np.abs(Z @ theta - B).max()
    taus = []
    tau = scale
    while np.isfinite(tau0) and tau > 2.0 * tau0:
        taus.append(tau)
        tau *= 0.5
    for tau in taus:
        theta, _ = _newton(X, Z, B, theta, tau, 20, tol)
    return _newton(X, Z, B, theta, tau0, max_iter, tol)


def _newton(X, Z, B, theta, tau, max_iter, tol):
    n0 = X.shape[0]
    F, r = _residual(X, Z, B, theta, tau)
    fnorm = np.linalg.norm(F)
    for _ in range(max_iter):
        if fnorm <= tol * n0:
            return theta, True
        J = _rescue((X * pseudo_huber_grad2(r, tau)[:, None]).T @ Z)
        step = np.linalg.solve(J, F)
        t = 1.0
        for _ in range(60):
            cand = theta - t * step
            F_c, r_c = _residual(X, Z, B, cand, tau)
            fn_c = np.linalg.norm(F_c)
            if fn_c < fnorm:
                break
            t *= 0.5
        else:
            break
        theta, F, r, fnorm = cand, F_c, r_c, fn_c
    return theta, bool(fnorm <= tol * n0)


def _rescue(J):
    scale = np.linalg.norm(J)
    if scale == 0.0 or not np.isfinite(scale):
        raise InitializationError("warm-start Jacobian is identically zero")
    if np.linalg.cond(J) > _COND_LIMIT:
        J = J + 1e-8 * scale * np.eye(J.shape[0])
        cond = np.linalg.cond(J)
        if cond > _COND_LIMIT:
            raise InitializationError(f"warm-start Jacobian singular (cond={cond:.3g} after ridge)")
    return J


@njit(cache=True, nogil=True)
def _rope_kernel(X, Z, B, theta_hat, theta_bar, g_bar, h_inv, h_avg, n, code, c_tau, beta1,
                 beta2, refresh_period, since_refresh, pending, scores):
    """Consume rows of (X, Z, B) in order, mutating the state arrays in place.

    Returns the new step counter, steps since the last direct refresh, whether
    a refresh is still pending, and the numbers of skipped rank-one updates
    and of direct refreshes.
    """
    d = X.shape[1]
    skipped = 0
    refreshed = 0
    hx = np.empty(d)
    zh = np.empty(d)
    for k in range(X.shape[0]):
        x = X[k]
        z = Z[k]
        tau = _tau_kernel(code, c_tau, beta1, beta2, n + 1.0)
        r = -B[k]
        for j in range(d):
            r += z[j] * theta_hat[j]
        g, gp = score_and_slope(r, tau)
        scores[k] = g

        a = n / (n + 1.0)
        w = 1.0 / (n + 1.0)
        for j in range(d):
            theta_bar[j] = a * theta_bar[j] + w * theta_hat[j]
            g_bar[j] = a * g_bar[j] + w * g * x[j]
        for i in range(d):
            gx = w * gp * x[i]
            for j in range(d):
                h_avg[i, j] = a * h_avg[i, j] + gx * z[j]

        for i in range(d):
            acc_h = 0.0
            acc_z = 0.0
            for j in range(d):
                acc_h += h_inv[i, j] * x[j]
                acc_z += z[j] * h_inv[j, i]
            hx[i] = acc_h
            zh[i] = acc_z
        # due refreshes happen from the step after a breakdown on, because at
        # the breakdown itself the new average is (numerically) singular
        refresh = pending or (refresh_period > 0 and since_refresh + 1 >= refresh_period)
        c1 = (n + 1.0) / n
        rank_one = gp > 0.0
        if rank_one:
            zhx = 0.0
            for j in range(d):
                zhx += zh[j] * x[j]
            s = zhx / n + 1.0 / gp
            if abs(s) < _BREAKDOWN:
                rank_one = False
                pending = True
                refresh = False
                skipped += 1
        if rank_one:
            c2 = (n + 1.0) / (n * n * s)
            for i in range(d):
                for j in range(d):
                    h_inv[i, j] = c1 * h_inv[i, j] - c2 * hx[i] * zh[j]
        else:
            for i in range(d):
                for j in range(d):
                    h_inv[i, j] *= c1

        since_refresh += 1
        if refresh and np.linalg.cond(h_avg) <= _COND_LIMIT:
            h_inv[:, :] = np.linalg.inv(h_avg)
            since_refresh = 0
            pending = False
            refreshed += 1
        elif refresh:
            pending = True

        for i in range(d):
            acc = 0.0
            for j in range(d):
                acc += h_inv[i, j] * g_bar[j]
            theta_hat[i] = theta_bar[i] - acc
        n += 1.0
    return n, since_refresh, pending, skipped, refreshed


class RopeEstimator:
    """Online state of the robust Newton-type TD estimator.

    Build one with :meth:`from_batch` (warm start + initialisation) or
    :meth:`from_initial` (given ``theta0``), then feed observations in
    trajectory order through :meth:`step` or :meth:`update`.

    Attributes
    ----------
    n : int
        Number of observations consumed, warm-start batch included.
    theta_hat, theta_bar, g_bar : ndarray (d,)
        Current estimate, running mean of past estimates, running mean score.
    h_inv : ndarray (d, d)
        Inverse of the running average information matrix.
    h_avg : ndarray (d, d)
        The running average itself, used for periodic direct refreshes of
        ``h_inv`` and as fallback when the rank-one update breaks down.
    """

    def __init__(self, theta0, h_avg, g_bar, n0: int, schedule: ThresholdSchedule,
                 refresh_period: int = DEFAULT_REFRESH_PERIOD):
        self.d = len(theta0)
        self.n0 = int(n0)
        self.n = int(n0)
        self.schedule = schedule
        self.refresh_period = int(refresh_period)
        self.theta_hat = np.array(theta0, dtype=float)
        self.theta_bar = self.theta_hat.copy()
        self.g_bar = np.array(g_bar, dtype=float)
        self.h_avg = np.array(h_avg, dtype=float)
        cond = np.linalg.cond(self.h_avg)
        if not cond <= _COND_LIMIT:
            raise InitializationError(f"initial information matrix is singular (cond={cond:.3g})")
        self.h_inv = np.linalg.inv(self.h_avg)
        self.n_skipped = 0
        self.n_refresh = 0
        self._since_refresh = 0
        self._pending = False

    @classmethod
    def from_initial(cls, batch, theta0, tau0: float, schedule: ThresholdSchedule,
                     refresh_period: int = DEFAULT_REFRESH_PERIOD) -> "RopeEstimator":
        """Initialise the running averages from a warm-start batch and ``theta0``."""
        X, Z, B = as_arrays(batch)
        n0, d = X.shape
        if n0 < d:
            raise InsufficientDataError(f"need n0 >= d, got n0={n0}, d={d}")
        theta0 = np.asarray(theta0, dtype=float)
        r = Z @ theta0 - B
        h0 = (X * pseudo_huber_grad2(r, tau0)[:, None]).T @ Z / n0
        g0 = X.T @ pseudo_huber_grad(r, tau0) / n0
        return cls(theta0, h0, g0, n0, schedule, refresh_period)

    @classmethod
    def from_batch(cls, batch, schedule: ThresholdSchedule, tau0: float | None = None,
                   refresh_period: int = DEFAULT_REFRESH_PERIOD, max_iter: int = 100,
                   tol: float = 1e-10) -> "RopeEstimator":
        """Warm start on ``batch`` and initialise; ``tau0`` defaults to ``tau(n0)``."""
        X, Z, B = as_arrays(batch)
        if tau0 is None:
            tau0 = tau_at(schedule, X.shape[0])
        theta0, converged = warm_start((X, Z, B), tau0, max_iter=max_iter, tol=tol)
        est = cls.from_initial((X, Z, B), theta0, tau0, schedule, refresh_period)
        est.warm_start_converged = converged
        return est

    def step(self, x, z, b) -> float:
        """Consume one observation; returns its pseudo-Huber score ``g``."""
        x = np.asarray(x, dtype=float).reshape(1, -1)
        z = np.asarray(z, dtype=float).reshape(1, -1)
        return float(self.update(x, z, np.array([b], dtype=float))[0])

    def update(self, X, Z, B) -> np.ndarray:
        """Consume a block of observations in order.

        Returns the scores ``g_{tau_i}(z_i @ theta_hat_{i-1} - b_i)``, which
        are exactly what the long-run covariance accumulator needs.
        """
        X, Z, B = as_arrays((np.atleast_2d(X), np.atleast_2d(Z), np.atleast_1d(B)))
        if X.shape[1] != self.d:
            raise DataError(f"observation dimension {X.shape[1]} != estimator dimension {self.d}")
        scores = np.empty(X.shape[0])
        s = self.schedule
        n, since, pending, skipped, refreshed = _rope_kernel(
            X, Z, B, self.theta_hat, self.theta_bar, self.g_bar, self.h_inv, self.h_avg,
            float(self.n), s.code, s.c_tau, s.beta1, s.beta2, self.refresh_period,
            self._since_refresh, self._pending, scores)
        self.n = int(n)
        self._since_refresh = since
        self._pending = bool(pending)
        self.n_skipped += skipped
        self.n_refresh += refreshed
        return scores

    def estimate(self) -> np.ndarray:
        return self.theta_hat.copy()

    def __repr__(self):
        return f"RopeEstimator(d={self.d}, n={self.n}, theta_hat={np.array2string(self.theta_hat, precision=4)})"


def tau_sequence(schedule: ThresholdSchedule, start: int, stop: int) -> np.ndarray:
    """``tau_i`` for ``i = start .. stop-1`` (vectorised convenience)."""
    return np.array([_tau_kernel(schedule.code, schedule.c_tau, schedule.beta1, schedule.beta2, float(i))
                     for i in range(start, stop)])


__all__ = [
    "Observation",
    "RopeEstimator",
    "warm_start",
    "as_arrays",
    "tau_sequence",
    "DEFAULT_N0",
    "DEFAULT_REFRESH_PERIOD",
]
