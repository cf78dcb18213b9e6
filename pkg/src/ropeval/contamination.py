"""Reward channel: additive (possibly heavy-tailed) noise and outlier replacement.

Every random quantity attached to stream index ``n`` is a function of
``(seed, n)`` alone. Draws are produced in fixed-size blocks, each block from
its own counter-based Philox generator keyed by ``(seed, stream, block)``, so
any index can be replayed without regenerating the prefix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

_BLOCK = 4096
_MAX_RATE = 1.0 - 2.0**-53

# sub-stream identifiers
_OUTLIER_TEST, _OUTLIER_VALUE, _NOISE_A, _NOISE_B = range(4)


class NoiseKind(str, Enum):
    NONE = "none"
    NORMAL = "normal"
    STUDENT_T = "student_t"
    CAUCHY = "cauchy"


class RateForm(str, Enum):
    ZERO = "zero"
    INVERSE_N = "inverse_n"
    C_SQRT_INV_N = "c_sqrt_inv_n"
    CONSTANT = "constant"


@dataclass(frozen=True)
class RateSchedule:
    """Contamination probability ``alpha_n`` at stream index ``n``."""

    form: RateForm = RateForm.ZERO
    c: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "form", RateForm(self.form))
        if self.form is RateForm.CONSTANT and not 0.0 <= self.c < 1.0:
            raise ValueError(f"constant rate must lie in [0, 1), got {self.c}")
        if self.form is RateForm.C_SQRT_INV_N and self.c < 0:
            raise ValueError(f"rate constant must be nonnegative, got {self.c}")

    def __call__(self, n):
        n = np.asarray(n, dtype=float)
        if self.form is RateForm.ZERO:
            rate = np.zeros_like(n)
        elif self.form is RateForm.INVERSE_N:
            rate = 1.0 / n
        elif self.form is RateForm.C_SQRT_INV_N:
            rate = self.c / np.sqrt(n)
        else:
            rate = np.full_like(n, self.c)
        rate = np.minimum(rate, _MAX_RATE)
        return rate[()] if rate.ndim == 0 else rate

    @property
    def label(self) -> str:
        if self.form is RateForm.C_SQRT_INV_N:
            return f"{self.c:g}/sqrt(n)"
        if self.form is RateForm.CONSTANT:
            return f"{self.c:g}"
        return {RateForm.ZERO: "0", RateForm.INVERSE_N: "1/n"}[self.form]


@dataclass(frozen=True)
class RewardChannel:
    """Maps clean expected rewards to observed rewards.

    With probability ``rate(n)`` the reward at index ``n`` is replaced by a
    ``Uniform[low, high]`` draw; otherwise ``noise`` is added to it.
    ``noise_param`` is the standard deviation for ``normal`` and the degrees
    of freedom for ``student_t``.
    """

    noise: NoiseKind = NoiseKind.NONE
    noise_param: float = 1.0
    rate: RateSchedule = field(default_factory=RateSchedule)
    low: float = 0.0
    high: float = 100.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "noise", NoiseKind(self.noise))
        if self.noise in (NoiseKind.NORMAL, NoiseKind.STUDENT_T) and not self.noise_param > 0:
            raise ValueError(f"noise parameter must be positive, got {self.noise_param}")
        if self.high < self.low:
            raise ValueError("outlier range must have low <= high")
        object.__setattr__(self, "_last", (None, None))

    def with_seed(self, seed: int) -> "RewardChannel":
        return RewardChannel(self.noise, self.noise_param, self.rate, self.low, self.high, int(seed))

    def _gen(self, stream: int, block: int) -> np.random.Generator:
        ss = np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF, stream, block])
        return np.random.Generator(np.random.Philox(ss))

    def _noise_block(self, block: int) -> np.ndarray:
        if self.noise is NoiseKind.NONE:
            return np.zeros(_BLOCK)
        if self.noise is NoiseKind.NORMAL:
            return self.noise_param * self._gen(_NOISE_A, block).standard_normal(_BLOCK)
        if self.noise is NoiseKind.CAUCHY:
            u = self._gen(_NOISE_A, block).random(_BLOCK)
            return np.tan(math.pi * (u - 0.5))
        df = self.noise_param
        z = self._gen(_NOISE_A, block).standard_normal(_BLOCK)
        chi2 = 2.0 * self._gen(_NOISE_B, block).standard_gamma(df / 2.0, _BLOCK)
        return z / np.sqrt(chi2 / df)

    def _block(self, block: int):
        cached_block, arrays = self._last
        if cached_block == block:
            return arrays
        u = self._gen(_OUTLIER_TEST, block).random(_BLOCK)
        value = self.low + (self.high - self.low) * self._gen(_OUTLIER_VALUE, block).random(_BLOCK)
        arrays = (u, value, self._noise_block(block))
        object.__setattr__(self, "_last", (block, arrays))
        return arrays

    def emit_many(self, clean, start: int):
        """Observed rewards for indices ``start, start+1, ...`` (1-based).

        Returns ``(b, is_outlier)`` arrays of the same length as ``clean``.
        """
        if start < 1:
            raise ValueError("stream indices start at 1")
        clean = np.asarray(clean, dtype=float)
        m = clean.shape[0]
        idx = np.arange(start, start + m)
        u = np.empty(m)
        value = np.empty(m)
        noise = np.empty(m)
        pos = 0
        while pos < m:
            i0 = idx[pos] - 1
            block, off = divmod(i0, _BLOCK)
            take = min(_BLOCK - off, m - pos)
            bu, bv, bn = self._block(block)
            u[pos:pos + take] = bu[off:off + take]
            value[pos:pos + take] = bv[off:off + take]
            noise[pos:pos + take] = bn[off:off + take]
            pos += take
        is_outlier = u < self.rate(idx)
        b = np.where(is_outlier, value, clean + noise)
        return b, is_outlier


def emit_reward(channel: RewardChannel, clean_reward: float, n: int):
    """Observed reward and outlier flag for a single index ``n``."""
    b, flag = channel.emit_many(np.array([clean_reward]), n)
    return float(b[0]), bool(flag[0])
