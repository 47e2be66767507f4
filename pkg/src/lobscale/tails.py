"""Power-law tail fits from samples or from a tabulated survival curve."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ConfigError, DegenerateError

MIN_TAIL_POINTS = 100


@dataclass(frozen=True)
class TailFit:
    exponent: float
    scale: float
    k_frac: float
    slope_exponent: float
    hill_ratio: float
    curvature_ratio: float
    n_tail: int

    @property
    def power_law(self) -> bool:
        """Whether the tail looks like a power law.

        Exponential-type tails make the log-log survival concave, so the
        slope over the outer half of the tail is much steeper than over the
        inner half, and the Hill estimate keeps growing as fewer order
        statistics are used.
        """
        return self.curvature_ratio < 1.5 and self.hill_ratio < 1.3


def _slopes(logx: np.ndarray, logs: np.ndarray) -> tuple[float, float]:
    """Overall log-log slope and the outer/inner slope ratio."""
    slope = np.polyfit(logx, logs, 1)[0]
    mid = 0.5 * (logx.min() + logx.max())
    inner, outer = logx <= mid, logx > mid
    if inner.sum() < 3 or outer.sum() < 3 or np.ptp(logx[inner]) == 0 or np.ptp(logx[outer]) == 0:
        return float(slope), 1.0
    s_in = np.polyfit(logx[inner], logs[inner], 1)[0]
    s_out = np.polyfit(logx[outer], logs[outer], 1)[0]
    return float(slope), float(s_out / s_in) if s_in < 0 else float("inf")


def hill(x_desc: np.ndarray, k: int) -> float:
    """Hill estimate of the tail index from the ``k`` largest values."""
    logs = np.log(x_desc[: k + 1])
    return 1.0 / float(np.mean(logs[:k] - logs[k]))


def fit_tail(samples: np.ndarray, k_frac: float = 0.05) -> TailFit:
    """Hill estimate on the top ``k_frac`` order statistics, with a log-log
    least-squares slope of the empirical survival as a cross-check."""
    if not 0 < k_frac <= 0.5:
        raise ConfigError(f"k_frac must lie in (0, 0.5], got {k_frac}")
    x = np.sort(np.asarray(samples, dtype=float).ravel())[::-1]
    x = x[np.isfinite(x)]
    k = int(k_frac * x.size)
    if k < MIN_TAIL_POINTS:
        raise DegenerateError(f"only {k} tail points; need at least {MIN_TAIL_POINTS}")
    top = x[: k + 1]
    if top[-1] <= 0 or top[0] == top[-1]:
        raise DegenerateError("tail has no variation (or is not positive)")
    alpha = hill(x, k)
    alpha_far = hill(x, max(k // 4, 10))
    ranks = np.arange(1, k + 1) / x.size
    slope, curv = _slopes(np.log(top[:k]), np.log(ranks))
    scale = (k / x.size) ** (-1.0 / alpha) / top[k]
    return TailFit(alpha, scale, k_frac, -slope, alpha_far / alpha, curv, k)


def fit_survival_curve(x: np.ndarray, survival: np.ndarray, k_frac: float = 0.05, floor: float = 1e-12) -> TailFit:
    """Log-log slope of a tabulated survival curve over ``floor <= S <= k_frac``."""
    x = np.asarray(x, dtype=float)
    s = np.asarray(survival, dtype=float)
    sel = (x > 0) & (s >= floor) & (s <= k_frac)
    if sel.sum() < MIN_TAIL_POINTS:
        raise DegenerateError(f"only {int(sel.sum())} tail points; need at least {MIN_TAIL_POINTS}")
    lx, ls = np.log(x[sel]), np.log(s[sel])
    if np.ptp(ls) == 0:
        raise DegenerateError("survival curve is flat over the tail region")
    slope, curv = _slopes(lx, ls)
    intercept = float(np.mean(ls - slope * lx))
    exponent = -slope
    scale = float(np.exp(-intercept / exponent))
    return TailFit(exponent, scale, k_frac, exponent, 1.0, curv, int(sel.sum()))
