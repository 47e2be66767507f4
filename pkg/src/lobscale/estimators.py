"""Path statistics: stationary spread moments, per-trade volatility, windowed
volatility with a permutation test for clustering, tail shape and sample
distances."""
from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from .core import ConfigError, DegenerateError, as_generator

SAMPLE_DT = 0.1
BURN_IN = 0.2
UPPER_RESIDUAL_MIN = 0.2


class InsufficientDataError(ConfigError):
    """The path is too short for the requested statistic."""


@dataclass(frozen=True)
class StationaryStats:
    mean: float
    std: float
    burn_in: float
    n_points: int
    mean_se: float

    def as_dict(self) -> dict:
        return asdict(self)


def sample_trade_path(t: np.ndarray, values: np.ndarray, horizon: float, dt: float = SAMPLE_DT, initial: float | None = None) -> np.ndarray:
    """Piecewise-constant path (value of the last trade at or before each
    grid time) sampled at ``0, dt, 2 dt, ...`` up to ``horizon``."""
    grid = np.arange(int(math.floor(horizon / dt + 1e-9)) + 1) * dt
    idx = np.searchsorted(t, grid, side="right") - 1
    first = values[0] if initial is None else initial
    return np.where(idx >= 0, values[np.clip(idx, 0, None)], first)


def batch_means_se(x: np.ndarray, n_batches: int = 20) -> float:
    """Standard error of the mean of a correlated series by batch means."""
    m = x.size // n_batches
    if m < 2:
        return float("nan")
    b = x[: m * n_batches].reshape(n_batches, m).mean(axis=1)
    return float(b.std(ddof=1) / math.sqrt(n_batches))


def stationary_stats(s, dt_sample: float = SAMPLE_DT, burn_in_frac: float = BURN_IN, path_dt: float | None = None) -> StationaryStats:
    """Mean and std of the spread sampled every ``dt_sample`` after burn-in.

    ``s`` is an :class:`~lobscale.sde.SdePath` or an array of values spaced
    ``path_dt`` apart (defaults to ``dt_sample``).
    """
    if hasattr(s, "sample_dt"):
        path_dt, s = s.sample_dt, s.s
    x = _resample(np.asarray(s, dtype=float), path_dt or dt_sample, dt_sample)
    if not 0 <= burn_in_frac < 1:
        raise ConfigError(f"burn-in fraction must lie in [0, 1), got {burn_in_frac}")
    x = x[int(burn_in_frac * x.size):]
    if x.size < 100:
        raise InsufficientDataError(f"{x.size} points after burn-in; need at least 100")
    return StationaryStats(float(x.mean()), float(x.std(ddof=1)), burn_in_frac, int(x.size), batch_means_se(x))


def _resample(x: np.ndarray, path_dt: float, dt: float) -> np.ndarray:
    stride = round(dt / path_dt)
    if stride < 1 or abs(stride * path_dt - dt) > 1e-9 * dt:
        raise ConfigError(f"sampling step {dt} is not a multiple of the path spacing {path_dt}")
    return x[::stride]


def sigma1(m, dt: float = SAMPLE_DT) -> float:
    """Root mean squared increment of ``m`` per unit time."""
    m = np.asarray(m, dtype=float)
    if m.size < 1001:
        raise InsufficientDataError(f"{m.size - 1} increments; need at least 1000")
    d = np.diff(m)
    return float(math.sqrt(np.mean(d * d) / dt))


@dataclass(frozen=True)
class VolSeries:
    t: np.ndarray
    sigma_bar: np.ndarray
    window_points: int


def vol_series(m, dt: float = SAMPLE_DT, window_points: int = 100) -> VolSeries:
    """Sample standard deviation of ``m`` levels over consecutive
    non-overlapping windows of ``window_points`` samples."""
    m = np.asarray(m, dtype=float)
    k = m.size // window_points
    if k < 10:
        raise InsufficientDataError(f"{k} windows; need at least 10")
    w = m[: k * window_points].reshape(k, window_points)
    sig = w.std(axis=1, ddof=1)
    return VolSeries(np.arange(k) * window_points * dt, sig, window_points)


def autocorr(x, lag: int = 1) -> float:
    x = np.asarray(x, dtype=float)
    if x.size <= lag + 1:
        raise InsufficientDataError("series too short for the requested lag")
    d = x - x.mean()
    den = float(np.dot(d, d))
    if den == 0:
        return 0.0
    return float(np.dot(d[:-lag], d[lag:]) / den)


@dataclass(frozen=True)
class ClusteringTest:
    acf1: float
    null_q: float
    p_value: float
    n_perm: int
    level: float

    @property
    def clustered(self) -> bool:
        return self.acf1 > self.null_q

    def as_dict(self) -> dict:
        return {**asdict(self), "clustered": self.clustered}


def clustering_test(sigma_bar, rng, n_perm: int = 200, level: float = 0.95) -> ClusteringTest:
    """Lag-1 autocorrelation against its distribution under random shuffles."""
    x = np.asarray(sigma_bar, dtype=float)
    g = as_generator(rng)
    obs = autocorr(x)
    null = np.array([autocorr(g.permutation(x)) for _ in range(n_perm)])
    p = (1 + int(np.sum(null >= obs))) / (n_perm + 1)
    return ClusteringTest(obs, float(np.quantile(null, level)), p, n_perm, level)


def ks_distance(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise InsufficientDataError("empty sample")
    return float(stats.ks_2samp(a, b).statistic)


def tv_distance(p: Mapping, q: Mapping) -> float:
    """Total variation between two pmfs given as ``value -> weight`` maps
    (weights are normalised, so raw counts are fine)."""
    sp, sq = float(sum(p.values())), float(sum(q.values()))
    if sp <= 0 or sq <= 0:
        raise InsufficientDataError("empty pmf")
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0) / sp - q.get(k, 0) / sq) for k in keys)


def distances(sample_a=None, sample_b=None, pmf_a=None, pmf_b=None) -> tuple[float | None, float | None]:
    ks = ks_distance(sample_a, sample_b) if sample_a is not None else None
    tv = tv_distance(pmf_a, pmf_b) if pmf_a is not None else None
    if ks is None and tv is None:
        raise InsufficientDataError("nothing to compare")
    return ks, tv


@dataclass(frozen=True)
class TailShape:
    """Empirical log-survival minus that of the exponential with the same
    mean, on a grid of upper quantiles."""

    quantiles: np.ndarray
    x: np.ndarray
    log_survival: np.ndarray
    log_survival_exp: np.ndarray
    positive_frac: float

    @property
    def residual(self) -> np.ndarray:
        return self.log_survival - self.log_survival_exp

    @property
    def upper_residual(self) -> float:
        """Mean residual over the upper half of the quantile grid."""
        r = self.residual
        return float(np.mean(r[r.size // 2:]))

    @property
    def heavier_than_exponential(self) -> bool:
        # sampling noise alone leaves residuals of a few hundredths, so a
        # sign test is not enough; ask for a visible lift in the far tail
        return self.positive_frac >= 0.9 and self.upper_residual > UPPER_RESIDUAL_MIN


def exponential_tail_check(x, start_q: float = 0.9, stop_q: float = 0.999, points: int = 50) -> TailShape:
    x = np.asarray(x, dtype=float)
    if x.size < 1000:
        raise InsufficientDataError("need at least 1000 points for a tail check")
    mean = float(x.mean())
    if mean <= 0:
        raise DegenerateError("nonpositive sample mean")
    qs = np.linspace(start_q, stop_q, points)
    xs = np.quantile(x, qs)
    xs_sorted = np.sort(x)
    surv = 1.0 - np.searchsorted(xs_sorted, xs, side="right") / x.size
    surv = np.maximum(surv, 0.5 / x.size)
    ls = np.log(surv)
    le = -xs / mean
    return TailShape(qs, xs, ls, le, float(np.mean(ls > le)))


def exponential_fit_pvalue(x, n_points: int = 10_000) -> float:
    """KS p-value of ``n_points`` evenly thinned values against the
    exponential with the same mean."""
    x = np.asarray(x, dtype=float)
    if x.size < n_points:
        raise InsufficientDataError(f"need at least {n_points} points")
    idx = np.linspace(0, x.size - 1, n_points).astype(int)
    y = x[idx]
    return float(stats.kstest(y, "expon", args=(0.0, y.mean())).pvalue)
