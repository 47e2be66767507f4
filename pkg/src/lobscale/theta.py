"""Relationships between order placement, cancellation and price-increment tails.

Curves are indexed by relative tick.  A :class:`PlacementPmf` carries its
lowest supported tick; every derived curve shares that offset so that
``curve[k]`` is the value at relative tick ``lo + k``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .core import ConfigError, DegenerateError, lowest_relative_tick


def _tail_sums(mass: np.ndarray) -> np.ndarray:
    """``out[k] = sum(mass[k+1:])`` with an exact zero past the last tick."""
    rev = np.minimum(np.cumsum(mass[::-1])[::-1], 1.0)
    return np.append(rev[1:], 0.0)


@dataclass(frozen=True)
class PlacementPmf:
    lo: int
    mass: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.mass, dtype=float)
        object.__setattr__(self, "mass", m)
        if m.ndim != 1 or m.size == 0:
            raise ConfigError("placement pmf needs a nonempty 1-d mass vector")
        if np.any(m < 0) or not np.all(np.isfinite(m)):
            raise ConfigError("placement masses must be finite and nonnegative")
        if abs(m.sum() - 1.0) > 1e-9:
            raise ConfigError(f"placement masses sum to {m.sum()!r}, not 1")

    @classmethod
    def from_weights(cls, lo: int, weights: Sequence[float]) -> "PlacementPmf":
        w = np.asarray(weights, dtype=float)
        return cls(lo, w / w.sum())

    @property
    def ticks(self) -> np.ndarray:
        return np.arange(self.lo, self.lo + self.mass.size)

    @property
    def hi(self) -> int:
        return self.lo + self.mass.size - 1

    def survival(self) -> np.ndarray:
        """``1 - F(i)`` at every supported tick, computed as tail sums."""
        return _tail_sums(self.mass)

    def survival_before(self) -> np.ndarray:
        """``1 - F(i - 1)``: mass at ticks ``>= i``."""
        return np.concatenate(([1.0], self.survival()[:-1]))

    def __call__(self, i: int) -> float:
        k = i - self.lo
        return float(self.mass[k]) if 0 <= k < self.mass.size else 0.0


@dataclass(frozen=True)
class CancellationCurve:
    lo: int
    rate: np.ndarray
    lam: float
    c_p: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "rate", np.asarray(self.rate, dtype=float))
        if np.any(self.rate < 0):
            raise ConfigError("cancellation rates must be nonnegative")

    def __call__(self, i: int) -> float:
        k = min(max(i - self.lo, 0), self.rate.size - 1)
        return float(self.rate[k])


@dataclass(frozen=True)
class ThetaCurve:
    """``value[k]`` is theta at relative tick ``lo + k``; one entry past the
    placement support is kept so the last increment mass is available."""

    lo: int
    value: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "value", np.asarray(self.value, dtype=float))

    def __call__(self, i: int) -> float:
        k = i - self.lo
        if k <= 0:
            return 1.0
        if k >= self.value.size:
            return float(self.value[-1])
        return float(self.value[k])

    @property
    def ticks(self) -> np.ndarray:
        return np.arange(self.lo, self.lo + self.value.size)

    def increment_pmf(self) -> np.ndarray:
        """``theta(i) - theta(i+1)`` over the stored ticks (last entry uses theta -> 0)."""
        nxt = np.append(self.value[1:], 0.0)
        return self.value - nxt

    def residual(self) -> float:
        """Mass the curve leaves beyond its last stored tick."""
        return float(self.value[-1]) if self.value.size else 1.0


# -- closed forms -----------------------------------------------------------

def cancellation_from_placement(p: PlacementPmf, lam: float, c_p: float) -> CancellationCurve:
    """Cancellation intensities that make the book's theta equal ``(1-F)^c_p``.

    Ticks with zero placement mass get the analytic limit
    ``(lam / c_p) * (1 - F(i-1))``.  The last supported tick, where
    ``1 - F = 0``, gets rate zero: its queue never empties.
    """
    if not c_p > 0:
        raise ConfigError(f"patience ratio must be positive, got {c_p}")
    if not lam > 0:
        raise ConfigError(f"arrival rate must be positive, got {lam}")
    before = p.survival_before()
    after = p.survival()
    rate = np.empty_like(p.mass)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_gap = np.log(before) - np.log(after)
        # masses far below the survival can round the difference to zero
        log_gap = np.where(log_gap > 0, log_gap, -np.log1p(-p.mass / np.maximum(before, 1e-300)))
    gap = p.mass == 0
    rate[gap] = lam / c_p * before[gap]
    pos = ~gap
    rate[pos] = lam / c_p * (p.mass[pos] / log_gap[pos])
    return CancellationCurve(p.lo, rate, lam, c_p)


def theta_from_queue_params(p: PlacementPmf, alpha: CancellationCurve, lam: float) -> ThetaCurve:
    """Probability that every class below tick ``i`` is empty under the
    product-Poisson stationary law of the per-class infinite-server queues."""
    if alpha.lo != p.lo or alpha.rate.size != p.mass.size:
        raise ConfigError("placement and cancellation curves must share their tick range")
    loads = np.zeros_like(p.mass)
    pos = p.mass > 0
    zero_rate = pos & (alpha.rate == 0)
    if np.any(zero_rate):
        after = p.survival()
        if np.any(after[zero_rate] > 0):
            k = int(np.flatnonzero(zero_rate & (after > 0))[0])
            raise DegenerateError(f"zero cancellation rate at tick {p.lo + k} with mass beyond it")
    with np.errstate(divide="ignore"):
        loads[pos] = lam * (p.mass[pos] / alpha.rate[pos])
    exponent = np.concatenate(([0.0], np.cumsum(loads)))
    return ThetaCurve(p.lo, np.exp(-exponent))


def theta_closed_form(p: PlacementPmf, c_p: float) -> ThetaCurve:
    if not c_p > 0:
        raise ConfigError(f"patience ratio must be positive, got {c_p}")
    tail = np.concatenate(([1.0], p.survival()))
    return ThetaCurve(p.lo, tail**c_p)


def _log_series_sum(log_ratio: Callable[[np.ndarray], np.ndarray], rel_tol: float = 1e-15) -> float:
    """log of ``sum_{l>=0} prod_{k=1..l} r_k`` given ``log r_k`` as a function of k."""
    total = 0.0  # log of running sum; the l=0 term is 1
    acc = 0.0
    start = 1
    chunk = 1024
    while True:
        k = np.arange(start, start + chunk, dtype=float)
        logs = acc + np.cumsum(log_ratio(k))
        total = np.logaddexp(total, np.logaddexp.reduce(logs))
        acc = float(logs[-1])
        start += chunk
        last_ratio = float(log_ratio(np.array([start - 1.0]))[0])
        if last_ratio < 0 and acc - total < math.log(rel_tol):
            return float(total)
        if start > 10**9:
            raise DegenerateError("series failed to converge")
        chunk = min(chunk * 2, 1 << 20)


def theta_other_regime(mass_below: float | Sequence[float], lam: float, mu: float, alpha: float) -> np.ndarray:
    """Theta under a constant per-order cancellation rate.

    Orders resting below tick ``i`` form one birth-death queue with births
    ``lam * F`` and deaths ``mu + k * alpha``; theta is its empty-state
    probability.  ``mass_below`` is ``F``, the placement mass strictly below
    ``i``.  The series is truncated once a term drops below 1e-15 of the sum.
    """
    if not (lam > 0 and mu > 0 and alpha > 0):
        raise ConfigError("lam, mu and alpha must be positive")
    out = []
    for f in np.atleast_1d(np.asarray(mass_below, dtype=float)):
        if f <= 0:
            out.append(1.0)
            continue
        birth = lam * f
        log_s = _log_series_sum(lambda k, b=birth: np.log(b) - np.log(mu + k * alpha))
        out.append(math.exp(-log_s))
    return np.asarray(out)


def theta_other_regime_limit(mass_below: float | Sequence[float], arrival_to_market: float) -> np.ndarray:
    """Limit of :func:`theta_other_regime` as ``alpha / lam -> 0`` with
    ``lam / mu -> arrival_to_market``: ``max(1 - c' F, 0)``.

    With ``c' = 1`` this is the placement survival ``1 - F``.
    """
    f = np.asarray(mass_below, dtype=float)
    return np.clip(1.0 - arrival_to_market * f, 0.0, None)


def tail_exponent_map(v: float, c_p: float) -> float:
    if not (v > 0 and c_p > 0):
        raise ConfigError("tail exponent and patience ratio must be positive")
    return c_p * v


def calibrate_patience_ratio(p: PlacementPmf, target: ThetaCurve) -> float:
    """Least-squares ``c_p`` in ``log theta(i) = c_p * log(1 - F(i-1))``."""
    surv = np.concatenate(([1.0], p.survival()))
    n = min(surv.size, target.value.size)
    if target.lo != p.lo:
        raise ConfigError("target curve and placement must share their lowest tick")
    x, y = surv[:n], target.value[:n]
    ok = (x > 0) & (x < 1) & (y > 0) & (y < 1)
    if not np.any(ok):
        raise DegenerateError("target theta has no interior points to fit")
    lx, ly = np.log(x[ok]), np.log(y[ok])
    c = float(lx @ ly / (lx @ lx))
    if not c > 0:
        raise DegenerateError(f"fitted patience ratio {c} is not positive")
    return c


# -- placement families -----------------------------------------------------

@dataclass(frozen=True)
class GeometricPlacement:
    """Mass ``(1-r) r^k`` at depth ``k`` beyond the lowest admissible tick,
    truncated at ``depth`` ticks and renormalised."""

    ratio: float
    depth: int

    def __call__(self, spread: int) -> PlacementPmf:
        k = np.arange(self.depth)
        return PlacementPmf.from_weights(lowest_relative_tick(spread), self.ratio**k)


@dataclass(frozen=True)
class PowerLawPlacement:
    """Mass proportional to ``(offset + k)^-exponent`` at depth ``k``."""

    exponent: float
    offset: float
    depth: int

    def __call__(self, spread: int) -> PlacementPmf:
        k = np.arange(self.depth, dtype=float)
        return PlacementPmf.from_weights(lowest_relative_tick(spread), (self.offset + k) ** -self.exponent)


@dataclass(frozen=True)
class TablePlacement:
    """Fixed weights at depths ``0..len-1`` beyond the lowest admissible tick."""

    weights: tuple[float, ...]

    def __call__(self, spread: int) -> PlacementPmf:
        return PlacementPmf.from_weights(lowest_relative_tick(spread), self.weights)


@dataclass(frozen=True)
class PatienceCancellation:
    """Cancellation rates tied to the placement by a patience ratio."""

    c_p: float

    def curve(self, p: PlacementPmf, lam: float) -> CancellationCurve:
        return cancellation_from_placement(p, lam, self.c_p)


@dataclass(frozen=True)
class ConstantCancellation:
    alpha: float

    def curve(self, p: PlacementPmf, lam: float) -> CancellationCurve:
        if not self.alpha > 0:
            raise ConfigError("constant cancellation rate must be positive")
        return CancellationCurve(p.lo, np.full(p.mass.size, self.alpha), lam)


def survival_power_law_pmf(v: float, top: int, lo: int = 1) -> PlacementPmf:
    """Pmf on ``{lo..top}`` whose survival ``sum_{j>=i} p(j)`` equals
    ``(i/lo)^-v`` exactly; the remaining mass sits on ``top``."""
    i = np.arange(lo, top + 1, dtype=float)
    s = (i / lo) ** -v
    w = np.append(s[:-1] - s[1:], s[-1])
    return PlacementPmf(lo, w / w.sum())


# -- I/O --------------------------------------------------------------------

def write_curve_csv(path, ticks: Iterable[int], values: Iterable[float], header: str = "value") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tick_index", header])
        for t, v in zip(ticks, values):
            w.writerow([int(t), repr(float(v))])


def read_curve_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    body = rows[1:]
    return np.array([int(r[0]) for r in body]), np.array([float(r[1]) for r in body])
