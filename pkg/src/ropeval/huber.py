"""Pseudo-Huber loss, its first two derivatives, and threshold schedules.

The loss is ``f(x) = tau**2 * (sqrt(1 + (x/tau)**2) - 1)``. It behaves like
``x**2 / 2`` near the origin and like ``tau*|x|`` in the tails, so the score
``g = f'`` is bounded by ``tau``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numba import njit


def _check_tau(tau):
    if np.any(np.asarray(tau) <= 0) or np.any(np.isnan(tau)):
        raise ValueError(f"threshold tau must be positive, got {tau!r}")


def pseudo_huber_value(x, tau):
    """Pseudo-Huber loss ``tau^2 (sqrt(1 + (x/tau)^2) - 1)``.

    Evaluated as ``x^2 / (1 + sqrt(1 + (x/tau)^2))``, which is algebraically
    identical, free of cancellation for small ``|x|/tau`` and tends to
    ``x^2 / 2`` for ``tau = inf``.
    """
    _check_tau(tau)
    x = np.asarray(x, dtype=float)
    out = x * x / (1.0 + np.sqrt(1.0 + (x / tau) ** 2))
    return out[()] if out.ndim == 0 else out


def pseudo_huber_grad(x, tau):
    """Score ``x / sqrt(1 + x^2/tau^2)``; odd, 1-Lipschitz and bounded by ``tau``."""
    _check_tau(tau)
    x = np.asarray(x, dtype=float)
    out = x / np.sqrt(1.0 + (x / tau) ** 2)
    return out[()] if out.ndim == 0 else out


def pseudo_huber_grad2(x, tau):
    """Derivative of the score, ``(1 + x^2/tau^2)^(-3/2)``, valued in (0, 1]."""
    _check_tau(tau)
    x = np.asarray(x, dtype=float)
    out = (1.0 + (x / tau) ** 2) ** -1.5
    return out[()] if out.ndim == 0 else out


@njit(cache=True, nogil=True)
def score_and_slope(r, tau):
    """Scalar ``(g_tau(r), g'_tau(r))`` for use inside compiled loops."""
    u = r / tau
    q = 1.0 + u * u
    root = math.sqrt(q)
    return r / root, 1.0 / (q * root)


class ScheduleFamily(str, Enum):
    THEOREM = "theorem"
    EXPERIMENT = "experiment"
    CONSTANT = "constant"


_FAMILY_CODE = {ScheduleFamily.THEOREM: 0, ScheduleFamily.EXPERIMENT: 1, ScheduleFamily.CONSTANT: 2}


@dataclass(frozen=True)
class ThresholdSchedule:
    """Time-varying threshold ``tau_i`` for the pseudo-Huber score.

    ``theorem``:    ``c_tau * max(1, i**beta1 / log(i)**beta2)``
    ``experiment``: ``c_tau * max(1, (i / log(i)**2)**beta1)``
    ``constant``:   ``c_tau`` (``c_tau = inf`` gives the squared loss)

    The logarithm is natural and evaluated at ``max(i, 3)``, so the schedule is
    finite from the first index on.
    """

    family: ScheduleFamily = ScheduleFamily.EXPERIMENT
    c_tau: float = 0.5
    beta1: float = 1.0 / 3.0
    beta2: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "family", ScheduleFamily(self.family))
        if not self.c_tau > 0:
            raise ValueError(f"c_tau must be positive, got {self.c_tau}")
        if not 0.0 <= self.beta1 < 1.0:
            raise ValueError(f"beta1 must lie in [0, 1), got {self.beta1}")
        if self.beta2 < 0:
            raise ValueError(f"beta2 must be nonnegative, got {self.beta2}")

    @classmethod
    def experiment(cls, c: float = 0.5, beta: float = 1.0 / 3.0) -> "ThresholdSchedule":
        return cls(ScheduleFamily.EXPERIMENT, c, beta, 0.0)

    @classmethod
    def theorem(cls, c_tau: float, beta1: float, beta2: float = 0.0) -> "ThresholdSchedule":
        return cls(ScheduleFamily.THEOREM, c_tau, beta1, beta2)

    @classmethod
    def constant(cls, tau: float) -> "ThresholdSchedule":
        return cls(ScheduleFamily.CONSTANT, tau, 0.0, 0.0)

    @property
    def code(self) -> int:
        return _FAMILY_CODE[self.family]

    def __call__(self, i: int) -> float:
        return tau_at(self, i)


def tau_at(schedule: ThresholdSchedule, i: int) -> float:
    """Threshold at (1-based) observation index ``i``."""
    if i < 1:
        raise ValueError(f"index must be >= 1, got {i}")
    return _tau_kernel(schedule.code, schedule.c_tau, schedule.beta1, schedule.beta2, float(i))


@njit(cache=True, nogil=True)
def _tau_kernel(code, c_tau, beta1, beta2, i):
    if code == 2:
        return c_tau
    logi = math.log(max(i, 3.0))
    if code == 0:
        return c_tau * max(1.0, i**beta1 / logi**beta2)
    return c_tau * max(1.0, (i / (logi * logi)) ** beta1)
