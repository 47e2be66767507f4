"""The pure-jump process of prices per trade in the fast-book limit.

At each market order (rate ``2 mu`` overall) both quotes jump outward from
the current quote by independent draws from the theta-difference pmf of the
current spread.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import ConfigError, DegenerateError, Quote, RngStream, TickGrid, as_generator
from .microsim import MicroParams, TradePath, TradeRecord
from .theta import ThetaCurve, theta_closed_form

RESIDUAL_TOL = 1e-10


@dataclass
class JumpLaw:
    """Spread-indexed theta curves plus the per-side market-order rate."""

    theta_of_spread: Callable[[int], ThetaCurve]
    mu: float
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if not self.mu >= 0:
            raise ConfigError(f"market-order rate must be nonnegative, got {self.mu}")

    @classmethod
    def from_micro(cls, params: MicroParams) -> "JumpLaw":
        return cls(params.theta, params.mu)

    @classmethod
    def from_patience(cls, placement, c_p: float, mu: float) -> "JumpLaw":
        return cls(lambda s: theta_closed_form(placement(s), c_p), mu)

    def pmf(self, spread: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(ticks, pmf, cdf)`` of one side's relative jump at this spread."""
        hit = self._cache.get(spread)
        if hit is None:
            th = self.theta_of_spread(spread)
            if th.residual() > RESIDUAL_TOL:
                raise DegenerateError(
                    f"theta at spread {spread} leaves mass {th.residual():.3g} beyond its last tick"
                )
            pmf = th.increment_pmf()
            cdf = np.cumsum(pmf)
            cdf /= cdf[-1]
            hit = (th.ticks, pmf, cdf)
            self._cache[spread] = hit
        return hit


def sample_jumps(spread: int, law: JumpLaw, rng, size: int | None = None):
    """Independent (ask, bid) relative jumps; returns ``(i, j)`` outward ticks."""
    ticks, _, cdf = law.pmf(spread)
    g = as_generator(rng)
    u = g.random((2,) if size is None else (2, size))
    idx = np.searchsorted(cdf, u, side="right").clip(0, ticks.size - 1)
    out = ticks[idx]
    if size is None:
        return int(out[0]), int(out[1])
    return out[0], out[1]


def sample_jump(quote: Quote, law: JumpLaw, rng) -> tuple[int, int]:
    """Quote change ``(da, db)`` in ticks: the ask moves by ``+i`` and the bid by ``-j``."""
    i, j = sample_jumps(quote.spread, law, rng)
    return i, -j


def simulate_jump_process(
    initial: Quote,
    law: JumpLaw,
    horizon: float,
    rng: RngStream | np.random.Generator | int,
    grid: TickGrid = TickGrid(0.01),
) -> TradePath:
    """Trade path of the limit process on ``[0, horizon]``.

    Each record's ``quote_before`` is the quote met by that trade, which is
    where the process sits right after the jump; the limit has no separate
    execution impact, so ``quote_after`` repeats it.
    """
    if not horizon > 0:
        raise ConfigError(f"horizon must be positive, got {horizon}")
    g = as_generator(rng)
    path = TradePath(grid=grid, initial=initial)
    if law.mu == 0:
        return path
    t, q, k = 0.0, initial, 0
    rate = 2.0 * law.mu
    while True:
        t += g.exponential(1.0 / rate)
        if t > horizon:
            break
        side = "buy" if g.random() < 0.5 else "sell"
        da, db = sample_jump(q, law, g)
        q = Quote(q.ask + da, q.bid + db)
        k += 1
        path.trades.append(TradeRecord(k, t, side, q, q))
    return path


def joint_pmf_distance(spread: int, law: JumpLaw, rng, size: int) -> tuple[float, float]:
    """TV distance between sampled joint jumps and the product law, and the
    sample correlation of the two coordinates."""
    ticks, pmf, _ = law.pmf(spread)
    i, j = sample_jumps(spread, law, rng, size)
    lo, m = int(ticks[0]), ticks.size
    counts = np.bincount((i - lo) * m + (j - lo), minlength=m * m).reshape(m, m) / size
    tv = 0.5 * float(np.abs(counts - np.outer(pmf, pmf)).sum())
    if np.std(i) == 0 or np.std(j) == 0:
        return tv, 0.0
    return tv, float(np.corrcoef(i, j)[0, 1])


def expected_jump_count(law: JumpLaw, horizon: float) -> tuple[float, float]:
    """Mean and standard deviation of the number of jumps on ``[0, horizon]``."""
    m = 2.0 * law.mu * horizon
    return m, math.sqrt(m)
