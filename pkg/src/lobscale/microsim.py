"""Event-driven simulation of the two-sided multiclass limit order book.

Between two market orders each side is a family of independent
infinite-server queues, one per relative tick.  Relative prices are measured
from a reference quote frozen at the last trade: the quote the market order
found on arrival, which is also the recorded price per trade.

Two drivers share the same state and produce the same law:

* ``events`` races exponential clocks one event at a time;
* ``intervals`` draws the exponential gap to the next market order and
  samples every class at the end of the gap in one go (binomial survival of
  resting orders plus Poisson arrivals that are still alive).

The second costs O(#classes) per trade instead of O(xi) and is the one to
use for large speed factors.
"""
from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterator, Literal

import numpy as np

from .core import (
    BookState,
    ConfigError,
    DegenerateError,
    Quote,
    RngStream,
    Side,
    TickGrid,
    as_generator,
    relative_to_absolute,
)
from .theta import CancellationCurve, PlacementPmf, ThetaCurve, theta_from_queue_params

log = logging.getLogger(__name__)

EmptySidePolicy = Literal["discard", "regenerate"]


@dataclass(frozen=True)
class MicroParams:
    lam: float
    mu: float
    placement: Callable[[int], PlacementPmf]
    cancellation: object  # PatienceCancellation | ConstantCancellation
    xi: float = 1.0
    grid: TickGrid = TickGrid(0.01)
    initial_quote: Quote = Quote(10_000, 9_998)
    q: int = 20
    initial_book: BookState | None = None
    horizon_trades: int | None = None
    horizon_time: float | None = None
    empty_side: EmptySidePolicy = "discard"

    def __post_init__(self) -> None:
        if not (self.lam > 0 and self.mu >= 0):
            raise ConfigError("need lam > 0 and mu >= 0")
        if not self.xi >= 1:
            raise ConfigError(f"speed factor must be >= 1, got {self.xi}")
        if self.empty_side not in ("discard", "regenerate"):
            raise ConfigError(f"unknown empty-side policy {self.empty_side!r}")
        if self.horizon_trades is None and self.horizon_time is None:
            raise ConfigError("give horizon_trades or horizon_time")
        if self.q < 1 and self.initial_book is None:
            raise ConfigError("initial book needs q >= 1 orders per side")
        # spread -> (pmf, cancellation curve), built lazily
        object.__setattr__(self, "_classes", lru_cache(maxsize=None)(self._build_classes))

    def _build_classes(self, spread: int) -> tuple[PlacementPmf, CancellationCurve]:
        p = self.placement(spread)
        return p, self.cancellation.curve(p, self.lam)

    def classes(self, spread: int) -> tuple[PlacementPmf, CancellationCurve]:
        return self._classes(spread)  # type: ignore[attr-defined]

    def theta(self, spread: int) -> ThetaCurve:
        p, a = self.classes(spread)
        return theta_from_queue_params(p, a, self.lam)

    def with_(self, **changes) -> "MicroParams":
        from dataclasses import replace

        return replace(self, **changes)


@dataclass(frozen=True)
class TradeRecord:
    k: int
    t: float
    side: Literal["buy", "sell"]
    quote_before: Quote
    quote_after: Quote

    @property
    def increment(self) -> tuple[int, int]:
        """Quote change caused by the execution, in ticks."""
        return (self.quote_after.ask - self.quote_before.ask, self.quote_after.bid - self.quote_before.bid)


@dataclass
class TradePath:
    trades: list[TradeRecord] = field(default_factory=list)
    grid: TickGrid = TickGrid(0.01)
    initial: Quote | None = None

    def __len__(self) -> int:
        return len(self.trades)

    def __iter__(self) -> Iterator[TradeRecord]:
        return iter(self.trades)

    def price_per_trade(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Trade times and the (ask, bid) ticks each market order met."""
        t = np.array([r.t for r in self.trades])
        a = np.array([r.quote_before.ask for r in self.trades], dtype=np.int64)
        b = np.array([r.quote_before.bid for r in self.trades], dtype=np.int64)
        return t, a, b

    def increments(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-trade price increments as relative ticks.

        Returns ``(spread_before, ask_rel, bid_rel)`` where ``ask_rel`` is
        ``a(t_k+1) - a(t_k)`` and ``bid_rel`` is ``b(t_k) - b(t_k+1)``, so
        both are measured outward from the reference quote and share the
        theta-difference law.
        """
        _, a, b = self.price_per_trade()
        if self.initial is not None:
            a = np.concatenate(([self.initial.ask], a))
            b = np.concatenate(([self.initial.bid], b))
        return (a - b)[:-1], np.diff(a), -np.diff(b)

    def write_csv(self, path, header_lines: tuple[str, ...] = ()) -> None:
        d = self.grid.delta
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "t_k", "side", "ask_before", "bid_before", "ask_after", "bid_after"])
            for r in self.trades:
                qb, qa = r.quote_before, r.quote_after
                w.writerow([r.k, f"{r.t:.12g}", r.side, f"{qb.ask * d:.12g}", f"{qb.bid * d:.12g}",
                            f"{qa.ask * d:.12g}", f"{qa.bid * d:.12g}"])


@dataclass
class SimCounters:
    events: int = 0
    arrivals: int = 0
    cancellations: int = 0
    trades: int = 0
    discarded: int = 0
    regenerated: int = 0
    clamped: int = 0
    rate_checks: int = 0


class LobSimulator:
    """Single-owner simulator state: book, frozen reference quote, clock."""

    RATE_CHECK_EVERY = 10_000

    def __init__(self, params: MicroParams, rng: RngStream | np.random.Generator | int):
        self.params = params
        self.rng = as_generator(rng)
        self.t = 0.0
        self.k = 0
        self.counters = SimCounters()
        if params.initial_book is not None:
            self.book = params.initial_book.copy()
        else:
            self.book = BookState()
            for side in ("ask", "bid"):
                self._place(side, params.initial_quote, params.q)
        self.book.validate()
        self.reference = self._observed_quote(params.initial_quote)
        self.initial = self.reference
        self._rates = {"ask": self._total_rate("ask"), "bid": self._total_rate("bid")}

    # -- helpers -----------------------------------------------------------

    def _place(self, side: Side, ref: Quote, count: int) -> None:
        p, _ = self.params.classes(ref.spread)
        rel = self.rng.choice(p.ticks, size=count, p=p.mass)
        for i in rel:
            self.book.add(side, relative_to_absolute(int(i), side, ref))

    def _observed_quote(self, fallback: Quote) -> Quote:
        a, b = self.book.best("ask"), self.book.best("bid")
        if a is None and b is None:
            return fallback
        if a is None:
            a = max(fallback.ask, b + 1)
        if b is None:
            b = min(fallback.bid, a - 1)
        return Quote(a, b)

    def _rel(self, side: Side, tick: int) -> int:
        return tick - self.reference.ask if side == "ask" else self.reference.bid - tick

    def cancel_rate(self, side: Side, tick: int) -> float:
        """Per-order cancellation rate (before the speed factor) of a resting order.

        Orders outside the current placement support use the rate of the
        nearest supported tick.
        """
        _, curve = self.params.classes(self.reference.spread)
        k = self._rel(side, tick) - curve.lo
        return float(curve.rate[min(max(k, 0), curve.rate.size - 1)])

    def _total_rate(self, side: Side) -> float:
        return math.fsum(n * self.cancel_rate(side, tick) for tick, n in self.book.side(side).items())

    def _refresh_rates(self) -> None:
        p, _ = self.params.classes(self.reference.spread)
        for side in ("ask", "bid"):
            for tick, n in self.book.side(side).items():
                k = self._rel(side, tick) - p.lo
                if k < 0 or k >= p.mass.size:
                    self.counters.clamped += n
        self._rates = {"ask": self._total_rate("ask"), "bid": self._total_rate("bid")}

    def check_rates(self) -> float:
        """Relative gap between incremental and recomputed cancellation totals."""
        worst = 0.0
        for side in ("ask", "bid"):
            exact = self._total_rate(side)
            gap = abs(self._rates[side] - exact) / max(exact, 1e-300) if exact > 0 else abs(self._rates[side])
            worst = max(worst, gap)
            self._rates[side] = exact
        self.counters.rate_checks += 1
        return worst

    # -- market orders -----------------------------------------------------

    def _market_order(self) -> TradeRecord | None:
        side_hit: Side = "ask" if self.rng.random() < 0.5 else "bid"
        if not self.book.side(side_hit):
            if self.params.empty_side == "discard":
                self.counters.discarded += 1
                log.debug("market order at t=%.6g discarded: %s side empty", self.t, side_hit)
                return None
            self._place(side_hit, self.reference, self.params.q)
            self.counters.regenerated += 1
        before = self._observed_quote(self.reference)
        best = before.ask if side_hit == "ask" else before.bid
        self.book.remove(side_hit, best)
        after = self._observed_quote(before)
        self.k += 1
        self.counters.trades += 1
        rec = TradeRecord(self.k, self.t, "buy" if side_hit == "ask" else "sell", before, after)
        self.reference = before
        self._refresh_rates()
        return rec

    # -- event-by-event driver ----------------------------------------------

    def step_event(self, t_max: float = math.inf) -> TradeRecord | None:
        """Advance to the next event of the chain and apply it.

        If the next event falls after ``t_max`` the clock stops at ``t_max``
        and nothing is applied.
        """
        prm = self.params
        arr = prm.xi * prm.lam
        rates = np.array([arr, arr, prm.xi * self._rates["ask"], prm.xi * self._rates["bid"], prm.mu, prm.mu])
        total = rates.sum()
        if total <= 0:
            raise DegenerateError("no event can occur")
        wait = self.rng.exponential(1.0 / total)
        if self.t + wait > t_max:
            self.t = t_max
            return None
        self.t += wait
        kind = int(np.searchsorted(np.cumsum(rates), self.rng.random() * total, side="right"))
        kind = min(kind, 5)
        self.counters.events += 1
        rec = None
        if kind < 2:
            side: Side = "ask" if kind == 0 else "bid"
            p, _ = prm.classes(self.reference.spread)
            i = int(p.ticks[np.searchsorted(np.cumsum(p.mass), self.rng.random(), side="right").clip(0, p.mass.size - 1)])
            tick = relative_to_absolute(i, side, self.reference)
            self.book.add(side, tick)
            self._rates[side] += self.cancel_rate(side, tick)
            self.counters.arrivals += 1
        elif kind < 4:
            side = "ask" if kind == 2 else "bid"
            book = self.book.side(side)
            ticks = sorted(book)
            w = np.array([book[x] * self.cancel_rate(side, x) for x in ticks])
            tw = w.sum()
            if tw > 0:
                tick = ticks[min(int(np.searchsorted(np.cumsum(w), self.rng.random() * tw, side="right")), len(ticks) - 1)]
                self._rates[side] -= self.cancel_rate(side, tick)
                self.book.remove(side, tick)
                self.counters.cancellations += 1
        else:
            rec = self._market_order()
        if self.counters.events % self.RATE_CHECK_EVERY == 0:
            gap = self.check_rates()
            if gap > 1e-9:
                raise DegenerateError(f"incremental cancellation rate drifted by {gap:.3g}")
        return rec

    # -- interval driver -----------------------------------------------------

    def evolve(self, dt: float) -> None:
        """Exact law of the book after ``dt`` time units without market orders."""
        prm = self.params
        p, curve = prm.classes(self.reference.spread)
        for side in ("ask", "bid"):
            book = self.book.side(side)
            if book:
                ticks = np.fromiter(book.keys(), dtype=np.int64, count=len(book))
                counts = np.fromiter(book.values(), dtype=np.int64, count=len(book))
                rel = ticks - self.reference.ask if side == "ask" else self.reference.bid - ticks
                k = rel - curve.lo
                alive = self.rng.binomial(counts, np.exp(-prm.xi * curve.rate[k.clip(0, curve.rate.size - 1)] * dt))
                self.counters.cancellations += int((counts - alive).sum())
                book.clear()
                for tick, n in zip(ticks.tolist(), alive.tolist()):
                    if n:
                        book[tick] = n
            rate = prm.xi * curve.rate
            with np.errstate(divide="ignore", invalid="ignore"):
                kept = np.where(rate > 0, -np.expm1(-rate * dt) / rate, dt)
            new = self.rng.poisson(prm.xi * prm.lam * p.mass * kept)
            self.counters.arrivals += int(new.sum())
            for i, n in zip(p.ticks.tolist(), new.tolist()):
                if n:
                    self.book.add(side, relative_to_absolute(i, side, self.reference), n)
        self.t += dt
        self._rates = {"ask": self._total_rate("ask"), "bid": self._total_rate("bid")}

    def next_trade(self, t_max: float = math.inf) -> TradeRecord | None:
        """Interval driver: jump to the next market order (or to ``t_max``)."""
        rate = 2.0 * self.params.mu
        gap = self.rng.exponential(1.0 / rate) if rate > 0 else math.inf
        if self.t + gap > t_max:
            self.evolve(t_max - self.t)
            return None
        self.evolve(gap)
        return self._market_order()

    def class_occupancy(self, side: Side) -> tuple[int, np.ndarray]:
        """Orders per relative tick of the current placement support."""
        p, _ = self.params.classes(self.reference.spread)
        occ = np.zeros(p.mass.size, dtype=np.int64)
        for tick, n in self.book.side(side).items():
            k = self._rel(side, tick) - p.lo
            if 0 <= k < occ.size:
                occ[k] += n
        return p.lo, occ


def run_until(
    params: MicroParams,
    rng: RngStream | np.random.Generator | int,
    method: Literal["events", "intervals"] = "events",
) -> tuple[TradePath, BookState, LobSimulator]:
    """Simulate to the horizon; returns the trade path, final book and the
    simulator (for counters)."""
    sim = LobSimulator(params, rng)
    path = TradePath(grid=params.grid, initial=sim.initial)
    n_max = params.horizon_trades if params.horizon_trades is not None else math.inf
    t_max = params.horizon_time if params.horizon_time is not None else math.inf
    if n_max <= 0 or t_max <= 0:
        return path, sim.book, sim
    if params.mu == 0 and t_max == math.inf:
        raise ConfigError("no market orders arrive, so a trade-count horizon is never reached")
    while len(path) < n_max:
        if method == "events":
            rec = sim.step_event(t_max)
            if rec is None and sim.t >= t_max:
                break
        elif method == "intervals":
            rec = sim.next_trade(t_max)
            if rec is None and sim.t >= t_max:
                break
        else:
            raise ConfigError(f"unknown method {method!r}")
        if rec is not None:
            path.trades.append(rec)
    return path, sim.book, sim


@dataclass
class OccupancyStats:
    spread: int
    lo: int
    n: int
    mean: np.ndarray
    var: np.ndarray
    expected: np.ndarray

    @property
    def ticks(self) -> np.ndarray:
        return np.arange(self.lo, self.lo + self.mean.size)

    @property
    def std_err(self) -> np.ndarray:
        return np.sqrt(self.var / max(self.n, 1))

    @property
    def dispersion(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.var / self.mean


def inter_trade_occupancy_probe(
    params: MicroParams, rng: RngStream | np.random.Generator | int, n_snapshots: int
) -> dict[int, OccupancyStats]:
    """Per-class occupancy right before each market order, by reference spread.

    Ask and bid sides are pooled; each snapshot contributes two rows.
    Expected values are the stationary Poisson means ``lam p / alpha``.
    """
    if not params.mu > 0:
        raise ConfigError("occupancy probe needs market orders (mu > 0)")
    sim = LobSimulator(params, rng)
    sums: dict[int, list] = {}
    taken = 0
    while taken < n_snapshots:
        gap = sim.rng.exponential(1.0 / (2.0 * params.mu))
        sim.evolve(gap)
        spread = sim.reference.spread
        for side in ("ask", "bid"):
            lo, occ = sim.class_occupancy(side)
            acc = sums.setdefault(spread, [lo, 0, np.zeros(occ.size), np.zeros(occ.size)])
            acc[1] += 1
            acc[2] += occ
            acc[3] += occ.astype(float) ** 2
        taken += 1
        sim._market_order()
    out = {}
    for spread, (lo, n, s1, s2) in sorted(sums.items()):
        p, a = params.classes(spread)
        with np.errstate(divide="ignore"):
            expected = np.where(p.mass > 0, params.lam * p.mass / np.where(a.rate > 0, a.rate, np.nan), 0.0)
        mean = s1 / n
        var = (s2 - n * mean**2) / max(n - 1, 1)
        out[spread] = OccupancyStats(spread, lo, n, mean, var, expected)
    return out


def increment_law_distance(path: TradePath, params: MicroParams) -> tuple[float, Counter, dict[int, float]]:
    """Total variation between the pooled one-trade increment pmf (both
    sides, relative ticks) and the theta-difference law averaged over the
    reference spreads the path actually visited."""
    spreads, ask_rel, bid_rel = path.increments()
    emp: Counter = Counter()
    exact: dict[int, float] = {}
    for s, da, db in zip(spreads.tolist(), ask_rel.tolist(), bid_rel.tolist()):
        emp[da] += 1
        emp[db] += 1
    total = 2 * len(spreads)
    if total == 0:
        raise DegenerateError("no trades to compare")
    cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for s, cnt in Counter(spreads.tolist()).items():
        if s not in cache:
            th = params.theta(s)
            cache[s] = (th.ticks, th.increment_pmf())
        ticks, pmf = cache[s]
        for i, w in zip(ticks.tolist(), pmf.tolist()):
            exact[i] = exact.get(i, 0.0) + w * 2 * cnt / total
    keys = set(emp) | set(exact)
    tv = 0.5 * sum(abs(emp.get(i, 0) / total - exact.get(i, 0.0)) for i in keys)
    return tv, emp, exact


def pool_by_depth(stats: dict[int, OccupancyStats]) -> OccupancyStats:
    """Merge per-spread occupancy stats class by class, indexing classes by
    depth beyond the lowest admissible tick.

    Only meaningful when the expected load of a class depends on its depth
    alone, as for the built-in families with constant cancellation.
    """
    if not stats:
        raise DegenerateError("no occupancy snapshots")
    size = max(st.mean.size for st in stats.values())
    n = np.zeros(size)
    s1 = np.zeros(size)
    s2 = np.zeros(size)
    expected = None
    for st in stats.values():
        m = st.mean.size
        n[:m] += st.n
        s1[:m] += st.n * st.mean
        s2[:m] += (st.n - 1) * st.var + st.n * st.mean**2
        if expected is None or expected.size < m:
            expected = np.zeros(size)
            expected[:m] = st.expected
        elif not np.allclose(expected[:m], st.expected, rtol=1e-12, atol=0):
            raise ConfigError("expected class loads depend on the spread; pooling by depth is invalid")
    mean = s1 / n
    var = (s2 - n * mean**2) / np.maximum(n - 1, 1)
    return OccupancyStats(-1, 0, int(n.min()), mean, var, expected)
