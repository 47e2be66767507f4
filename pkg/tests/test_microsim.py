import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lobscale.averaged import JumpLaw, expected_jump_count, joint_pmf_distance, sample_jump, simulate_jump_process
from lobscale.core import BookState, ConfigError, Quote, RngStream
from lobscale.microsim import (
    LobSimulator,
    MicroParams,
    increment_law_distance,
    inter_trade_occupancy_probe,
    pool_by_depth,
    run_until,
)
from lobscale.theta import ConstantCancellation, GeometricPlacement, PatienceCancellation, TablePlacement


def params(**kw):
    base = dict(lam=1.0, mu=1.0, placement=GeometricPlacement(0.5, 20), cancellation=PatienceCancellation(1.0),
                xi=10.0, horizon_trades=200)
    base.update(kw)
    return MicroParams(**base)


def test_transient_occupancy_without_market_orders():
    prm = params(mu=0.0, lam=3.0, cancellation=ConstantCancellation(2.0), placement=TablePlacement((0.5, 0.3, 0.2)),
                 xi=1.0, initial_book=BookState(), horizon_trades=None, horizon_time=0.4)
    reps = 4000
    occ = np.zeros((reps, 3))
    for r in range(reps):
        sim = LobSimulator(prm, RngStream(5, r))
        sim.evolve(0.4)
        occ[r] = sim.class_occupancy("ask")[1]
    expected = 3.0 * np.array([0.5, 0.3, 0.2]) / 2.0 * (1 - math.exp(-2.0 * 0.4))
    se = np.sqrt(expected / reps)
    assert np.all(np.abs(occ.mean(axis=0) - expected) < 4 * se)
    assert np.allclose(occ.var(axis=0, ddof=1) / expected, 1.0, atol=0.1)


def test_event_driver_matches_transient_law():
    prm = params(mu=0.0, lam=3.0, cancellation=ConstantCancellation(2.0), placement=TablePlacement((0.5, 0.5)),
                 xi=1.0, initial_book=BookState(), horizon_trades=None, horizon_time=0.5)
    reps = 1500
    tot = np.zeros(reps)
    for r in range(reps):
        sim = LobSimulator(prm, RngStream(6, r))
        while sim.t < 0.5:
            sim.step_event(0.5)
        tot[r] = sim.class_occupancy("bid")[1].sum()
    expected = 3.0 / 2.0 * (1 - math.exp(-1.0))
    assert abs(tot.mean() - expected) < 4 * math.sqrt(expected / reps)


def test_market_buy_walks_to_next_level():
    book = BookState()
    book.add("ask", 100)
    book.add("ask", 103)
    book.add("bid", 98, 3)
    sim = LobSimulator(params(initial_book=book, initial_quote=Quote(100, 98)), 0)
    sim.rng = _FixedUniform(sim.rng, 0.1)  # pick the ask side
    rec = sim._market_order()
    assert rec.side == "buy"
    assert rec.quote_before == Quote(100, 98)
    assert rec.quote_after.ask == 103
    assert rec.increment == (3, 0)


class _FixedUniform:
    def __init__(self, g, u):
        self._g, self._u = g, u

    def random(self, *a, **k):
        return self._u

    def __getattr__(self, name):
        return getattr(self._g, name)


def test_zero_horizon_gives_empty_path():
    path, book, _ = run_until(params(horizon_trades=0), 1)
    assert len(path) == 0
    assert book.total() == 40


@pytest.mark.parametrize("method", ["events", "intervals"])
def test_same_seed_same_path(method, tmp_path):
    a, _, _ = run_until(params(), RngStream(9, 2), method)
    b, _, _ = run_until(params(), RngStream(9, 2), method)
    a.write_csv(tmp_path / "a.csv")
    b.write_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert len(a) == 200


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32), st.sampled_from(["events", "intervals"]))
def test_book_stays_valid(seed, method):
    prm = params(horizon_trades=30, xi=3.0)
    sim = LobSimulator(prm, seed)
    for _ in range(400 if method == "events" else 30):
        sim.step_event() if method == "events" else sim.next_trade()
        sim.book.validate()
        assert sim.reference.ask > sim.reference.bid
    assert sim.check_rates() < 1e-9


def test_unused_class_stays_empty_and_loads_match():
    prm = params(lam=20.0, mu=2.0, xi=200.0, placement=TablePlacement((0.4, 0.0, 0.35, 0.25)),
                 cancellation=ConstantCancellation(1.0))
    pooled = pool_by_depth(inter_trade_occupancy_probe(prm, RngStream(4), 3000))
    assert pooled.mean[1] == 0.0 and pooled.var[1] == 0.0
    sel = pooled.expected > 0
    z = (pooled.mean - pooled.expected)[sel] / pooled.std_err[sel]
    assert np.all(np.abs(z) < 3.5)


def test_microsim_parameter_checks():
    with pytest.raises(ConfigError):
        params(xi=0.5)
    with pytest.raises(ConfigError):
        params(horizon_trades=None)
    with pytest.raises(ConfigError):
        params(empty_side="wait")


def test_increment_law_close_at_high_speed():
    prm = params(xi=1000.0, horizon_trades=3000, placement=GeometricPlacement(0.5, 40))
    path, _, _ = run_until(prm, RngStream(7, 1), "intervals")
    tv, emp, exact = increment_law_distance(path, prm)
    assert tv < 0.06
    assert sum(emp.values()) == 6000


# -- averaged jump process ------------------------------------------------------

def test_degenerate_placement_gives_constant_prices():
    law = JumpLaw.from_patience(TablePlacement((1.0,)), 1.0, mu=3.0)
    path = simulate_jump_process(Quote(1000, 998), law, 5.0, RngStream(1))
    assert len(path) > 0
    assert all(r.quote_before == Quote(1000, 998) for r in path)


def test_no_market_orders_no_jumps():
    law = JumpLaw.from_patience(GeometricPlacement(0.5, 10), 1.0, mu=0.0)
    assert len(simulate_jump_process(Quote(1000, 998), law, 10.0, 0)) == 0


def test_jump_count_matches_rate():
    law = JumpLaw.from_patience(GeometricPlacement(0.5, 10), 1.0, mu=2.0)
    counts = [len(simulate_jump_process(Quote(1000, 990), law, 3.0, RngStream(2, r))) for r in range(400)]
    m, sd = expected_jump_count(law, 3.0)
    assert abs(np.mean(counts) - m) < 4 * sd / math.sqrt(400)


def test_sides_jump_independently():
    law = JumpLaw.from_patience(GeometricPlacement(0.6, 15), 2.0, mu=1.0)
    tv, corr = joint_pmf_distance(4, law, RngStream(3), 200_000)
    assert tv < 0.02 and abs(corr) < 0.01


def test_sample_jump_directions():
    law = JumpLaw.from_patience(GeometricPlacement(0.5, 10), 1.0, mu=1.0)
    g = RngStream(4).generator()
    q = Quote(1000, 980)
    moves = [sample_jump(q, law, g) for _ in range(2000)]
    lo = law.pmf(q.spread)[0][0]
    assert all(da >= lo and -db >= lo for da, db in moves)
    # jumps must not cross the mid
    assert all(q.ask + da > q.bid + db - 0 for da, db in moves)
