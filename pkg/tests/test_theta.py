import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lobscale.core import ConfigError, DegenerateError
from lobscale.tails import fit_survival_curve
from lobscale.theta import (
    CancellationCurve,
    GeometricPlacement,
    PlacementPmf,
    PowerLawPlacement,
    TablePlacement,
    calibrate_patience_ratio,
    cancellation_from_placement,
    read_curve_csv,
    survival_power_law_pmf,
    tail_exponent_map,
    theta_closed_form,
    theta_from_queue_params,
    theta_other_regime,
    theta_other_regime_limit,
    write_curve_csv,
)

UNIFORM10 = PlacementPmf.from_weights(0, [1.0] * 10)


def pmfs():
    w = st.lists(st.floats(0.0, 10.0), min_size=1, max_size=40).filter(lambda x: sum(x) > 1e-3)
    return st.builds(lambda lo, ws: PlacementPmf.from_weights(lo, ws), st.integers(-5, 3), w)


def test_cancellation_rate_oracle():
    a = cancellation_from_placement(UNIFORM10, 1.0, 1.0)
    assert a(0) == pytest.approx(0.949122158102990577, rel=1e-14)


def test_cancellation_rate_at_placement_gap():
    p = PlacementPmf(0, np.array([0.2, 0.1, 0.1, 0.0, 0.6]))
    assert cancellation_from_placement(p, 1.0, 2.0)(3) == pytest.approx(0.3, rel=1e-15)


def test_cancellation_rate_last_tick_is_zero():
    assert cancellation_from_placement(UNIFORM10, 1.0, 1.0).rate[-1] == 0.0


def test_theta_examples():
    assert theta_closed_form(UNIFORM10, 2.0)(0) == 1.0
    a = cancellation_from_placement(UNIFORM10, 1.0, 2.0)
    assert theta_from_queue_params(UNIFORM10, a, 1.0)(5) == pytest.approx(0.25, rel=1e-12)
    assert theta_closed_form(UNIFORM10, 2.0)(5) == pytest.approx(0.25, rel=1e-12)
    const = CancellationCurve(0, np.ones(10), 1.0)
    assert theta_from_queue_params(UNIFORM10, const, 1.0)(10) == pytest.approx(0.36787944117144232, rel=1e-14)
    assert theta_closed_form(UNIFORM10, 1.0)(10) == 0.0
    assert theta_closed_form(UNIFORM10, 3.0)(40) == 0.0


def test_zero_rate_with_mass_beyond_is_degenerate():
    bad = CancellationCurve(0, np.r_[np.ones(4), 0.0, np.ones(5)], 1.0)
    with pytest.raises(DegenerateError):
        theta_from_queue_params(UNIFORM10, bad, 1.0)


@settings(max_examples=60, deadline=None)
@given(pmfs(), st.sampled_from([0.1, 1.0, 10.0]), st.sampled_from([0.5, 1.0, 2.0]))
def test_closed_form_matches_queue_composition(p, lam, c_p):
    a = theta_closed_form(p, c_p).value
    b = theta_from_queue_params(p, cancellation_from_placement(p, lam, c_p), lam).value
    pos = a > 0
    np.testing.assert_array_equal(b[~pos], 0.0)
    np.testing.assert_allclose(b[pos], a[pos], rtol=1e-12, atol=0)


@settings(max_examples=60, deadline=None)
@given(pmfs(), st.floats(0.2, 4.0))
def test_theta_curves_are_survival_functions(p, c_p):
    th = theta_closed_form(p, c_p)
    assert th.value[0] == 1.0
    assert np.all(np.diff(th.value) <= 0)
    assert th.value[-1] == 0.0
    pmf = th.increment_pmf()
    assert np.all(pmf >= 0) and math.isclose(pmf.sum(), 1.0, rel_tol=1e-12)


@settings(max_examples=40, deadline=None)
@given(pmfs())
def test_unit_patience_gives_placement_survival(p):
    np.testing.assert_allclose(theta_closed_form(p, 1.0).value[1:], p.survival(), rtol=0, atol=1e-15)


def test_other_regime_series():
    assert theta_other_regime([0.0], 1.0, 1.0, 1.0)[0] == 1.0
    assert theta_other_regime([1.0], 1.0, 1.0, 1.0)[0] == pytest.approx(0.58197670686932642, rel=1e-13)


def test_other_regime_slow_cancellation_limit():
    # births 0.5, deaths 2 + 1e-6 k: nearly an M/M/1 queue at load 1/4
    series = theta_other_regime([0.5], 1.0, 2.0, 1e-6)[0]
    assert series == pytest.approx(0.75000016666648149, rel=1e-12)
    assert series == pytest.approx(theta_other_regime_limit(0.5, 0.5), rel=1e-6)


def test_tail_exponent_map():
    assert tail_exponent_map(2.8, 1.0) == 2.8
    assert tail_exponent_map(1.5, 2.0) == 3.0
    with pytest.raises(ConfigError):
        tail_exponent_map(1.5, 0.0)


def test_fitted_power_law_mapping():
    th = theta_closed_form(survival_power_law_pmf(1.5, 100_000), 2.0)
    fit = fit_survival_curve(th.ticks[:-1], th.value[:-1], 0.05)
    assert fit.exponent == pytest.approx(3.0, rel=0.1)


def test_calibrate_patience_ratio():
    p = survival_power_law_pmf(1.5, 2000)
    assert calibrate_patience_ratio(p, theta_closed_form(p, 2.0)) == pytest.approx(2.0, abs=1e-9)
    th = theta_closed_form(p, 0.7)
    noisy = type(th)(th.lo, np.clip(th.value * np.random.default_rng(0).lognormal(0, 0.01, th.value.size), 0, 1))
    assert calibrate_patience_ratio(p, noisy) == pytest.approx(0.7, abs=0.02)
    with pytest.raises(DegenerateError):
        calibrate_patience_ratio(p, type(th)(th.lo, np.ones(th.value.size)))


def test_placement_families_respect_mid():
    for fam in (GeometricPlacement(0.5, 10), PowerLawPlacement(1.5, 1.0, 10), TablePlacement((0.5, 0.3, 0.2))):
        for spread in (1, 2, 5, 10):
            p = fam(spread)
            assert p.lo > -spread / 2
            assert p.mass.sum() == pytest.approx(1.0)


def test_invalid_pmf_rejected():
    with pytest.raises(ConfigError):
        PlacementPmf(0, np.array([0.5, 0.6]))
    with pytest.raises(ConfigError):
        PlacementPmf(0, np.array([-0.1, 1.1]))


def test_curve_csv_roundtrip(tmp_path):
    th = theta_closed_form(UNIFORM10, 2.0)
    write_curve_csv(tmp_path / "t.csv", th.ticks, th.value, "theta")
    ticks, vals = read_curve_csv(tmp_path / "t.csv")
    np.testing.assert_array_equal(ticks, th.ticks)
    np.testing.assert_allclose(vals, th.value, rtol=1e-15)


@settings(max_examples=30, deadline=None)
@given(pmfs(), st.floats(0.1, 5.0))
def test_doubling_patience_halves_rates(p, c_p):
    a = cancellation_from_placement(p, 1.0, c_p).rate
    b = cancellation_from_placement(p, 1.0, 2 * c_p).rate
    np.testing.assert_allclose(b, a / 2, rtol=1e-14)
