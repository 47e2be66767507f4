import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lobscale.core import ConfigError
from lobscale.estimators import (
    InsufficientDataError,
    autocorr,
    clustering_test,
    distances,
    exponential_fit_pvalue,
    exponential_tail_check,
    ks_distance,
    sample_trade_path,
    sigma1,
    stationary_stats,
    tv_distance,
    vol_series,
)


def test_constant_spread_stats():
    st_ = stationary_stats(np.full(5000, 0.5))
    assert st_.mean == 0.5 and st_.std == 0.0


def test_sigma1_examples():
    t = np.arange(2001) * 0.1
    assert sigma1(t) == pytest.approx(math.sqrt(0.01 / 0.1), rel=1e-12)
    assert sigma1(np.zeros(2001)) == 0.0
    m = np.cumsum(np.random.default_rng(0).normal(0, math.sqrt(0.0064 * 0.1), 200_000))
    assert sigma1(m) == pytest.approx(0.08, rel=0.02)


@settings(max_examples=50, deadline=None)
@given(st.floats(-100, 100), st.floats(0.1, 10), st.integers(0, 1000))
def test_sigma1_shift_and_scale(shift, scale, seed):
    m = np.cumsum(np.random.default_rng(seed).normal(size=1500))
    base = sigma1(m)
    assert sigma1(m + shift) == pytest.approx(base, rel=1e-9)
    assert sigma1(scale * m) == pytest.approx(scale * base, rel=1e-9)


def test_vol_series_examples():
    assert np.all(vol_series(np.ones(3000)).sigma_bar == 0)
    vs = vol_series(np.random.default_rng(1).normal(size=100_000))
    assert vs.window_points == 100
    assert np.all(np.abs(vs.sigma_bar - 1) < 0.3)
    assert vs.sigma_bar.mean() == pytest.approx(1.0, rel=0.15)
    assert vs.t[1] == pytest.approx(10.0)


def test_short_inputs_rejected():
    with pytest.raises(InsufficientDataError):
        sigma1(np.zeros(100))
    with pytest.raises(InsufficientDataError):
        vol_series(np.zeros(500))
    with pytest.raises(InsufficientDataError):
        stationary_stats(np.zeros(50))
    with pytest.raises(ConfigError):
        stationary_stats(np.zeros(5000), burn_in_frac=1.0)


def test_distances():
    x = np.random.default_rng(2).normal(size=1000)
    assert ks_distance(x, x) == 0.0
    assert tv_distance({0: 1}, {1: 1}) == 1.0
    assert tv_distance({0: 2, 1: 2}, {0: 0.5, 1: 0.5}) == 0.0
    g = np.random.default_rng(3)
    ks, tv = distances(g.normal(size=10_000), g.normal(0.5, size=10_000))
    assert ks == pytest.approx(0.19741265, abs=0.03) and tv is None


def test_sample_trade_path():
    t = np.array([0.05, 0.25])
    v = np.array([1.0, 2.0])
    np.testing.assert_array_equal(sample_trade_path(t, v, 0.3, 0.1, initial=0.0), [0.0, 1.0, 1.0, 2.0])


def test_clustering_detects_persistence():
    g = np.random.default_rng(4)
    x = np.empty(2000)
    x[0] = 0
    for k in range(1, x.size):
        x[k] = 0.8 * x[k - 1] + g.normal()
    res = clustering_test(np.abs(x) + 1, np.random.default_rng(5))
    assert res.clustered and res.p_value < 0.01
    iid = clustering_test(g.exponential(size=2000), np.random.default_rng(6))
    assert iid.p_value > 0.01
    assert autocorr(np.ones(10)) == 0.0


def test_tail_check_separates_exponential_and_power_law():
    g = np.random.default_rng(7)
    expo = exponential_tail_check(g.exponential(size=200_000))
    assert not expo.heavier_than_exponential
    heavy = exponential_tail_check(g.pareto(2.5, size=200_000))
    assert heavy.heavier_than_exponential
    assert exponential_fit_pvalue(g.exponential(size=50_000)) > 0.01
    assert exponential_fit_pvalue(g.pareto(2.5, size=50_000)) < 1e-6
