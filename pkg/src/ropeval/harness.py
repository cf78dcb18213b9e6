"""Seeded Monte Carlo experiments: coverage, width, error and runtime of CIs.

A *cell* is one configuration run for ``replications`` independent streams on a
shared environment; a *sweep* is a Cartesian grid of cells. Reports are plain
CSV with a header row and floats printed to 9 significant digits.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import itertools
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .contamination import NoiseKind, RateForm, RateSchedule, RewardChannel
from .errors import ConfigError, RopeError
from .estimator import RopeEstimator
from .huber import ScheduleFamily, ThresholdSchedule
from .longrun import LongRunCovariance, confidence_interval
from .lsa import LsaEstimator
from .mdp import (
    MdpSpec,
    QLearningConfig,
    gridworld_8x8,
    lake_start,
    random_mdp,
    sample_stream,
    target_vector,
    true_theta,
    two_state_chain,
)
from .trajectory import read_trajectory

log = logging.getLogger(__name__)

ENVS = ("random_mdp", "gridworld", "two_state", "external_csv")
METHODS = ("rope", "lsa")

REPLICATE_COLUMNS = ("replicate", "method", "env", "noise", "alpha_form", "C", "beta", "n",
                     "covered", "ci_width", "abs_err", "floored", "runtime_ms")
GROUP_COLUMNS = ("method", "env", "noise", "alpha_form", "C", "beta", "n")
SUMMARY_COLUMNS = GROUP_COLUMNS + ("rows", "coverage_rate", "mean_width", "median_abs_err",
                                   "mean_runtime_ms", "floored_rate")

SWEEP_KEYS = ("method", "noise", "rate", "c_tau", "beta1", "alpha", "eta")

# default (gamma, d) per environment
_ENV_DEFAULTS = {"random_mdp": (0.9, 10), "gridworld": (0.95, 4), "two_state": (0.5, 1)}


@dataclass
class ExperimentConfig:
    """Flat experiment description; field names double as config-file keys.

    ``gamma`` and ``d`` default to the environment's own defaults when left
    at ``None``. ``target`` is ``auto``, ``coord:k`` (0-based) or
    ``state:s``; ``auto`` means coordinate 0, or the start tile on the
    gridworld. ``sweep_*`` fields hold grids for :func:`run_sweep`.
    """

    env: str = "random_mdp"
    method: str = "rope"
    n: int = 10_000
    n0: int = 100
    replications: int = 100
    schedule: str = "experiment"
    c_tau: float = 0.5
    beta1: float = 1.0 / 3.0
    beta2: float = 0.0
    noise: str = "normal"
    noise_sigma: float = 1.0
    noise_df: float = 1.5
    rate: str = "zero"
    rate_c: float = 0.05
    outlier_low: float = 0.0
    outlier_high: float = 100.0
    lam: float = 2.0
    target: str = "auto"
    xi: float = 0.05
    seed: int = 0
    threads: int = 1
    alpha: float = 0.5
    eta: float = 2.0 / 3.0
    b_boot: int = 200
    env_seed: int = 1
    n_states: int = 50
    n_actions: int = 5
    d: int | None = None
    gamma: float | None = None
    slip: float = 2.0 / 3.0
    policy_epsilon: float = 0.0
    q_episodes: int = 100_000
    refresh_period: int = 4096
    checkpoints: tuple = ()
    timing: bool = True
    csv_path: str = ""
    sweep_c_tau: tuple = ()
    sweep_beta1: tuple = ()
    sweep_alpha: tuple = ()
    sweep_eta: tuple = ()
    sweep_method: tuple = ()
    sweep_noise: tuple = ()
    sweep_rate: tuple = ()

    def validate(self) -> "ExperimentConfig":
        if self.env not in ENVS:
            raise ConfigError(f"env must be one of {ENVS}, got {self.env!r}")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.n < 2 or self.replications < 1 or self.threads < 1:
            raise ConfigError("need n >= 2, replications >= 1 and threads >= 1")
        if self.method == "rope" and not self.n0 < self.n:
            raise ConfigError(f"need n0 < n, got n0={self.n0}, n={self.n}")
        if not 0.0 < self.xi < 1.0:
            raise ConfigError(f"xi must lie in (0, 1), got {self.xi}")
        for c in self.checkpoints:
            if not (self.method == "lsa" or self.n0 < c) or c > self.n:
                raise ConfigError(f"checkpoint {c} outside ({self.n0}, {self.n}]")
        try:
            self.threshold_schedule()
            self.channel()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        self._target()
        return self

    def threshold_schedule(self) -> ThresholdSchedule:
        return ThresholdSchedule(ScheduleFamily(self.schedule), self.c_tau, self.beta1, self.beta2)

    def channel(self) -> RewardChannel:
        rate = RateSchedule(RateForm(self.rate), self.rate_c)
        kind = NoiseKind(self.noise)
        param = self.noise_df if kind is NoiseKind.STUDENT_T else self.noise_sigma
        return RewardChannel(kind, param, rate,
                             self.outlier_low, self.outlier_high, self.seed)

    def grid(self) -> list[dict]:
        """Cartesian product of the nonempty ``sweep_*`` grids, outermost first."""
        keys = [k for k in SWEEP_KEYS if getattr(self, "sweep_" + k)]
        if not keys:
            return []
        values = [getattr(self, "sweep_" + k) for k in keys]
        return [dict(zip(keys, combo)) for combo in itertools.product(*values)]

    def point(self, **changes) -> "ExperimentConfig":
        """Copy with ``changes`` applied and the sweep grids cleared."""
        cleared = {f"sweep_{k}": () for k in SWEEP_KEYS}
        return dataclasses.replace(self, **cleared, **changes)

    def horizons(self) -> list[int]:
        return sorted(set(int(c) for c in self.checkpoints) | {int(self.n)})

    def _target(self):
        if self.target == "auto":
            return ("state", None) if self.env == "gridworld" else ("coord", 0)
        kind, _, idx = self.target.partition(":")
        if kind not in ("coord", "state") or not idx.lstrip("-").isdigit():
            raise ConfigError(f"target must be auto, coord:k or state:s, got {self.target!r}")
        return kind, int(idx)


class Environment(NamedTuple):
    spec: MdpSpec | None
    start_state: int
    v: np.ndarray
    truth: float


def build_environment(config: ExperimentConfig) -> Environment:
    """Environment, target direction ``v`` and oracle value ``v @ theta*``."""
    gamma, d = _ENV_DEFAULTS[config.env]
    gamma = gamma if config.gamma is None else config.gamma
    d = d if config.d is None else config.d
    start = 0
    if config.env == "random_mdp":
        spec = random_mdp(config.env_seed, config.n_states, config.n_actions, d, gamma)
    elif config.env == "gridworld":
        q = QLearningConfig(episodes=config.q_episodes)
        spec = gridworld_8x8(config.env_seed, d, gamma, q, slip=config.slip,
                             policy_epsilon=config.policy_epsilon)
        start = lake_start()
    else:
        spec = two_state_chain(gamma)
    theta = true_theta(spec)
    kind, idx = config._target()
    if kind == "coord":
        if not 0 <= idx < spec.d:
            raise ConfigError(f"coordinate {idx} out of range for d={spec.d}")
        v = np.eye(spec.d)[idx]
    else:
        state = start if idx is None else idx
        if not 0 <= state < spec.n_states:
            raise ConfigError(f"state {state} out of range for {spec.n_states} states")
        v = target_vector(spec, state)
    return Environment(spec, start, v, float(v @ theta))


def replicate_seeds(base: int, r: int) -> tuple[int, int, int]:
    """Independent (chain, reward, bootstrap) seeds for replicate ``r``."""
    s = np.random.SeedSequence([int(base) & 0xFFFFFFFFFFFFFFFF, int(r)]).generate_state(3, np.uint64)
    return int(s[0]), int(s[1]), int(s[2])


# Streaming pipelines -----------------------------------------------------------

def rope_intervals(X, Z, B, config: ExperimentConfig, v, horizons=None):
    """Run ROPE with the lock-step covariance; yield ``(n, ci, estimator)`` at each horizon.

    The first ``n0`` rows are the warm-start batch; the covariance only
    accumulates from row ``n0 + 1`` on.
    """
    n0 = config.n0
    horizons = horizons or [X.shape[0]]
    est = RopeEstimator.from_batch((X[:n0], Z[:n0], B[:n0]), config.threshold_schedule(),
                                   refresh_period=config.refresh_period)
    cov = LongRunCovariance(est.d, config.lam)
    pos = n0
    for m in horizons:
        g = est.update(X[pos:m], Z[pos:m], B[pos:m])
        cov.update_many(X[pos:m], g)
        pos = m
        yield m, confidence_interval(v, est.theta_hat, est.h_inv, cov, est.n, config.xi), est, cov


def lsa_intervals(X, Z, B, config: ExperimentConfig, v, seed: int, horizons=None):
    """Averaged TD from zero with bootstrap intervals at each horizon."""
    horizons = horizons or [X.shape[0]]
    est = LsaEstimator(X.shape[1], config.alpha, config.eta, config.b_boot, seed=seed)
    pos = 0
    for m in horizons:
        est.update(X[pos:m], Z[pos:m], B[pos:m])
        pos = m
        yield m, est.confidence_interval(v, config.xi), est


# Reports ---------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "nan" if math.isnan(value) else f"{float(value):.9g}"
    return str(value)


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


@dataclass
class ExperimentReport:
    rows: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)

    def extend(self, other: "ExperimentReport") -> "ExperimentReport":
        self.rows.extend(other.rows)
        self.diagnostics.extend(other.diagnostics)
        return self

    def summary(self) -> list[dict]:
        """One aggregate row per (method, env, noise, alpha_form, C, beta, n), in first-seen order."""
        groups: dict = {}
        for row in self.rows:
            if row["replicate"] < 0:
                continue
            groups.setdefault(tuple(row[c] for c in GROUP_COLUMNS), []).append(row)
        out = []
        for key, rows in groups.items():
            covered = np.array([r["covered"] for r in rows], dtype=float)
            ok = np.isfinite(covered)
            width = np.array([r["ci_width"] for r in rows], dtype=float)[ok]
            err = np.array([r["abs_err"] for r in rows], dtype=float)[ok]
            rt = np.array([r["runtime_ms"] for r in rows], dtype=float)[ok]
            fl = np.array([r["floored"] for r in rows], dtype=float)[ok]
            agg = dict(zip(GROUP_COLUMNS, key))
            agg.update(rows=len(rows),
                       coverage_rate=_mean(covered[ok]), mean_width=_mean(width),
                       median_abs_err=float(np.median(err)) if err.size else math.nan,
                       mean_runtime_ms=_mean(rt), floored_rate=_mean(fl))
            out.append(agg)
        return out

    def replicate_csv(self) -> str:
        return _csv_text(REPLICATE_COLUMNS, self.rows)

    def summary_csv(self) -> str:
        return _csv_text(SUMMARY_COLUMNS, self.summary())

    def write(self, path, summary_path=None):
        with open(path, "w", newline="") as fh:
            fh.write(self.replicate_csv())
        if summary_path is not None:
            with open(summary_path, "w", newline="") as fh:
                fh.write(self.summary_csv())


def _mean(a) -> float:
    return float(np.mean(a)) if len(a) else math.nan


def _noise_label(config: ExperimentConfig) -> str:
    kind = NoiseKind(config.noise)
    if kind is NoiseKind.STUDENT_T:
        return f"{kind.value}({config.noise_df:g})"
    if kind is NoiseKind.NORMAL and config.noise_sigma != 1.0:
        return f"{kind.value}({config.noise_sigma:g})"
    return kind.value


def _row_base(config: ExperimentConfig, r: int, n: int) -> dict:
    c, beta = (config.c_tau, config.beta1) if config.method == "rope" else (config.alpha, config.eta)
    return {"replicate": r, "method": config.method, "env": config.env, "noise": _noise_label(config),
            "alpha_form": config.channel().rate.label, "C": float(c), "beta": float(beta), "n": n,
            "covered": math.nan, "ci_width": math.nan, "abs_err": math.nan, "floored": math.nan,
            "runtime_ms": math.nan}


# Cells and sweeps ------------------------------------------------------------

def _run_replicate(config: ExperimentConfig, env: Environment, r: int):
    chain_seed, reward_seed, boot_seed = replicate_seeds(config.seed, r)
    horizons = config.horizons()
    channel = config.channel().with_seed(reward_seed)
    X, Z, B, _ = sample_stream(env.spec, chain_seed, env.start_state, channel).take(config.n)
    rows = []
    try:
        t0 = time.perf_counter()
        if config.method == "rope":
            runs = ((m, ci) for m, ci, *_ in rope_intervals(X, Z, B, config, env.v, horizons))
        else:
            runs = ((m, ci) for m, ci, _ in lsa_intervals(X, Z, B, config, env.v, boot_seed, horizons))
        for m, ci in runs:
            elapsed = (time.perf_counter() - t0) * 1e3
            row = _row_base(config, r, m)
            row.update(covered=int(ci.contains(env.truth)), ci_width=ci.width,
                       abs_err=abs(ci.center - env.truth), floored=int(ci.floored),
                       runtime_ms=elapsed if config.timing else math.nan)
            rows.append(row)
        return rows, None
    except (RopeError, ArithmeticError) as exc:
        done = {row["n"] for row in rows}
        rows += [_row_base(config, r, m) for m in horizons if m not in done]
        return rows, f"replicate {r}: {type(exc).__name__}: {exc}"


def run_cell(config: ExperimentConfig, env: Environment | None = None) -> ExperimentReport:
    """All replicates of one configuration.

    Replicates run on a thread pool of ``config.threads`` workers; rows come
    back in replicate order, so the report does not depend on the pool width.
    Environment or oracle failures abort the cell with one diagnostic row
    (``replicate = -1``); estimator failures blank that replicate's row.
    """
    config.validate()
    if config.env == "external_csv":
        raise ConfigError("external_csv data is handled by estimate_from_csv, not run_cell")
    report = ExperimentReport()
    if env is None:
        try:
            env = build_environment(config)
        except (RopeError, ArithmeticError) as exc:
            report.rows.append(_row_base(config, -1, config.n))
            report.diagnostics.append(f"cell aborted: {type(exc).__name__}: {exc}")
            log.error(report.diagnostics[-1])
            return report
    reps = range(config.replications)
    if config.threads == 1:
        results = [_run_replicate(config, env, r) for r in reps]
    else:
        with ThreadPoolExecutor(config.threads) as pool:
            results = list(pool.map(lambda r: _run_replicate(config, env, r), reps))
    for rows, diag in results:
        report.rows.extend(rows)
        if diag:
            report.diagnostics.append(diag)
            log.warning(diag)
    return report


def run_sweep(config: ExperimentConfig) -> ExperimentReport:
    """Run :func:`run_cell` on every point of the ``sweep_*`` grid.

    The environment is built once and shared by all points. Its aggregate
    has one row per grid point (and horizon).
    """
    points = config.grid()
    if not points:
        raise ConfigError("sweep needs at least one nonempty sweep_* grid")
    base = config.point()
    base.validate()
    report = ExperimentReport()
    try:
        env = build_environment(base)
    except (RopeError, ArithmeticError) as exc:
        report.rows.append(_row_base(base, -1, base.n))
        report.diagnostics.append(f"sweep aborted: {type(exc).__name__}: {exc}")
        return report
    for changes in points:
        try:
            report.extend(run_cell(base.point(**changes), env))
        except ConfigError as exc:
            point = base.point(**changes)
            report.rows.append(_row_base(point, -1, point.n))
            report.diagnostics.append(f"point {changes}: {exc}")
    return report


# External data -----------------------------------------------------------------

@dataclass
class EstimateResult:
    theta_hat: np.ndarray
    sigma: np.ndarray | None
    ci: object
    n: int

    @property
    def sigma_v(self) -> float:
        return math.sqrt(max(self.ci.sigma_v_sq_raw, 0.0)) if self.sigma is not None else math.nan

    def to_csv(self) -> str:
        rows = [{"quantity": f"theta_{j + 1}", "value": v} for j, v in enumerate(self.theta_hat)]
        if self.sigma is not None:
            d = self.sigma.shape[0]
            rows += [{"quantity": f"sigma_{i + 1}_{j + 1}", "value": self.sigma[i, j]}
                     for i in range(d) for j in range(d)]
        rows += [{"quantity": "n", "value": self.n},
                 {"quantity": "center", "value": self.ci.center},
                 {"quantity": "sigma_v", "value": self.sigma_v},
                 {"quantity": "ci_lower", "value": self.ci.lower},
                 {"quantity": "ci_upper", "value": self.ci.upper},
                 {"quantity": "level", "value": self.ci.level},
                 {"quantity": "floored", "value": bool(self.ci.floored)}]
        return _csv_text(("quantity", "value"), rows)


def estimate_on_arrays(X, Z, B, config: ExperimentConfig) -> EstimateResult:
    kind, idx = config._target()
    if kind != "coord":
        raise ConfigError("on raw trajectories the target must be a coordinate (coord:k)")
    d = X.shape[1]
    if not 0 <= idx < d:
        raise ConfigError(f"coordinate {idx} out of range for d={d}")
    v = np.eye(d)[idx]
    if config.method == "rope":
        if not X.shape[0] > config.n0:
            raise ConfigError(f"need more than n0={config.n0} rows, got {X.shape[0]}")
        _, ci, est, cov = next(rope_intervals(X, Z, B, config, v))
        return EstimateResult(est.estimate(), cov.sigma.copy(), ci, est.n)
    _, ci, est = next(lsa_intervals(X, Z, B, config, v, config.seed))
    return EstimateResult(est.estimate(), None, ci, est.n)


def estimate_from_csv(path, config: ExperimentConfig, out=None) -> EstimateResult:
    """Run the configured method on a trajectory CSV (``x_1..x_d, z_1..z_d, b``).

    A dimension mismatch with ``config.d`` is reported from the header alone,
    before any row is parsed. ``out`` optionally receives the result CSV.
    """
    X, Z, B, _ = read_trajectory(path, d=config.d)
    result = estimate_on_arrays(X, Z, B, config)
    if out is not None:
        with open(out, "w", newline="") as fh:
            fh.write(result.to_csv())
    return result
