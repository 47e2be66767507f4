"""Shared vocabulary: the price lattice, quotes, book snapshots and RNG streams.

Prices are integer tick indices everywhere inside the package.  Real-valued
prices only appear at I/O boundaries, via :class:`TickGrid`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterator, Literal

import numpy as np

Side = Literal["ask", "bid"]


class LobError(Exception):
    """Base class for package errors."""


class ConfigError(LobError, ValueError):
    """Invalid parameters or configuration."""


class DegenerateError(LobError, ArithmeticError):
    """A numerical degeneracy (empty tail region, infinite Poisson mean, ...)."""


@dataclass(frozen=True)
class TickGrid:
    delta: float

    def __post_init__(self) -> None:
        if not (self.delta > 0 and math.isfinite(self.delta)):
            raise ConfigError(f"tick size must be positive, got {self.delta}")

    def to_price(self, tick: int | np.ndarray) -> float | np.ndarray:
        return np.asarray(tick) * self.delta if isinstance(tick, np.ndarray) else tick * self.delta

    def to_tick(self, price: float) -> int:
        """Nearest tick index of a price that is meant to lie on the lattice."""
        k = round(price / self.delta)
        if abs(k * self.delta - price) > 1e-9 * max(1.0, abs(price)):
            raise ConfigError(f"price {price} is not on the lattice of step {self.delta}")
        return int(k)


def lattice_floor(x: float | np.ndarray, delta: float | TickGrid) -> float | np.ndarray:
    """Round a price down (toward -inf) onto the lattice ``delta * Z``.

    >>> lattice_floor(-0.3, 0.2)
    -0.4
    """
    d = delta.delta if isinstance(delta, TickGrid) else delta
    k = np.floor(np.asarray(x, dtype=float) / d)
    # x/d can land a hair below an integer for lattice inputs; snap those back.
    k = np.where(np.isclose(k + 1.0, np.asarray(x, dtype=float) / d, rtol=0.0, atol=1e-9), k + 1.0, k)
    out = k * d
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class Quote:
    """Best ask/bid as tick indices."""

    ask: int
    bid: int

    def __post_init__(self) -> None:
        if self.ask < self.bid:
            raise ConfigError(f"crossed quote: ask {self.ask} < bid {self.bid}")

    @property
    def spread(self) -> int:
        return self.ask - self.bid

    @property
    def mid2(self) -> int:
        """Twice the mid price (ask + bid), which stays on the lattice."""
        return self.ask + self.bid


def relative_to_absolute(i: int, side: Side, quote: Quote) -> int:
    """Absolute tick of relative tick ``i``; ask side counts up, bid side down."""
    if side == "ask":
        return quote.ask + i
    if side == "bid":
        return quote.bid - i
    raise ConfigError(f"unknown side {side!r}")


def absolute_to_relative(tick: int, side: Side, quote: Quote) -> int:
    return tick - quote.ask if side == "ask" else quote.bid - tick


def lowest_relative_tick(spread: int) -> int:
    """Smallest relative tick whose price lies strictly beyond the mid.

    Placement is supported on ``{i : i > -spread/2}``.
    """
    if spread < 0:
        raise ConfigError(f"negative spread {spread}")
    return -((spread + 1) // 2) + 1 if spread > 0 else 1


@dataclass
class BookState:
    """Resting unit orders per absolute tick on each side."""

    ask_side: Dict[int, int] = field(default_factory=dict)
    bid_side: Dict[int, int] = field(default_factory=dict)

    def copy(self) -> "BookState":
        return BookState(dict(self.ask_side), dict(self.bid_side))

    def side(self, side: Side) -> Dict[int, int]:
        return self.ask_side if side == "ask" else self.bid_side

    def best(self, side: Side) -> int | None:
        book = self.side(side)
        if not book:
            return None
        return min(book) if side == "ask" else max(book)

    @property
    def quote(self) -> Quote:
        a, b = self.best("ask"), self.best("bid")
        if a is None or b is None:
            raise DegenerateError("quote undefined: a book side is empty")
        return Quote(a, b)

    def add(self, side: Side, tick: int, count: int = 1) -> None:
        book = self.side(side)
        book[tick] = book.get(tick, 0) + count

    def remove(self, side: Side, tick: int, count: int = 1) -> None:
        book = self.side(side)
        left = book.get(tick, 0) - count
        if left < 0:
            raise DegenerateError(f"removing {count} orders from {side} tick {tick} holding {book.get(tick, 0)}")
        if left == 0:
            del book[tick]
        else:
            book[tick] = left

    def total(self) -> int:
        return sum(self.ask_side.values()) + sum(self.bid_side.values())

    def validate(self) -> None:
        for name, book in (("ask", self.ask_side), ("bid", self.bid_side)):
            for tick, n in book.items():
                if n <= 0:
                    raise DegenerateError(f"{name} tick {tick} holds {n} orders")
        overlap = self.ask_side.keys() & self.bid_side.keys()
        if overlap:
            raise DegenerateError(f"ticks occupied on both sides: {sorted(overlap)}")
        if self.ask_side and self.bid_side and min(self.ask_side) <= max(self.bid_side):
            raise DegenerateError("book is crossed")

    def depth_rows(self) -> Iterator[tuple[str, int, int]]:
        for tick in sorted(self.bid_side):
            yield "bid", tick, self.bid_side[tick]
        for tick in sorted(self.ask_side):
            yield "ask", tick, self.ask_side[tick]


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream identified by ``(seed, stream_id)``.

    Backed by numpy's counter-based Philox generator; distinct stream ids get
    independent keys through :class:`numpy.random.SeedSequence` spawning.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self) -> None:
        if not (0 <= self.seed < 2**64):
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.stream_id < 0:
            raise ConfigError("stream_id must be nonnegative")

    def generator(self, *substream: int) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id, *substream))
        return np.random.Generator(np.random.Philox(ss))

    def child(self, index: int) -> "RngStream":
        """Derived stream for a replication; mixes the parent id into the seed."""
        mixed = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,)).generate_state(2, np.uint32)
        return RngStream(int(mixed[0]) << 32 | int(mixed[1]), index)


def as_generator(rng: RngStream | np.random.Generator | int) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    return RngStream(int(rng)).generator()
