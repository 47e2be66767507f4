import numpy as np
import pytest
from hypothesis import given, strategies as st

from lobscale.core import (
    BookState,
    ConfigError,
    DegenerateError,
    Quote,
    RngStream,
    TickGrid,
    absolute_to_relative,
    lattice_floor,
    lowest_relative_tick,
    relative_to_absolute,
)


def test_lattice_floor_examples():
    assert lattice_floor(0.37, 0.1) == pytest.approx(0.3)
    assert lattice_floor(-0.05, 0.1) == pytest.approx(-0.1)
    # U = 0.02, n = 1e4, delta = 1e-4: U / sqrt(n) = 2e-4 is exactly two ticks
    assert lattice_floor(0.02 / 100, 1e-4) == pytest.approx(2e-4)


def test_lattice_floor_keeps_lattice_points():
    for k in range(-50, 50):
        assert lattice_floor(k * 0.01, 0.01) == pytest.approx(k * 0.01)


@given(st.floats(-1e3, 1e3, allow_nan=False), st.sampled_from([0.01, 0.1, 0.25, 1e-4]))
def test_lattice_floor_is_below_and_within_one_tick(x, d):
    y = lattice_floor(x, d)
    assert y <= x + 1e-9 * d
    assert x - y < d * (1 + 1e-9)
    assert abs(y / d - round(y / d)) < 1e-6


def test_relative_prices():
    q = Quote(1000, 998)
    assert TickGrid(0.01).to_price(relative_to_absolute(2, "ask", q)) == pytest.approx(10.02)
    assert TickGrid(0.01).to_price(relative_to_absolute(2, "bid", q)) == pytest.approx(9.96)
    inside = relative_to_absolute(-1, "ask", Quote(1000, 990))
    assert inside == 999 and 990 < inside < 1000


@given(st.integers(-100, 100), st.sampled_from(["ask", "bid"]), st.integers(0, 50))
def test_relative_roundtrip(i, side, spread):
    q = Quote(5000 + spread, 5000)
    assert absolute_to_relative(relative_to_absolute(i, side, q), side, q) == i


@given(st.integers(0, 200))
def test_lowest_relative_tick_is_past_the_mid(spread):
    lo = lowest_relative_tick(spread)
    assert lo > -spread / 2
    assert lo - 1 <= -spread / 2


def test_crossed_quote_rejected():
    with pytest.raises(ConfigError):
        Quote(99, 100)


def test_book_state():
    b = BookState()
    b.add("ask", 100, 2)
    b.add("bid", 98)
    assert b.quote == Quote(100, 98)
    b.remove("ask", 100, 2)
    assert b.best("ask") is None
    with pytest.raises(DegenerateError):
        b.quote
    with pytest.raises(DegenerateError):
        b.remove("bid", 98, 5)
    b.add("ask", 97)
    with pytest.raises(DegenerateError):
        b.validate()


def test_rng_streams_reproducible_and_distinct():
    a = RngStream(7, 3).generator().random(5)
    assert np.array_equal(a, RngStream(7, 3).generator().random(5))
    assert not np.array_equal(a, RngStream(7, 4).generator().random(5))
    assert not np.array_equal(a, RngStream(7, 3).generator(1).random(5))
    with pytest.raises(ConfigError):
        RngStream(-1)
    with pytest.raises(ConfigError):
        RngStream(2**64)
