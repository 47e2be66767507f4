import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from lobscale.core import ConfigError, DegenerateError
from lobscale.laws import ULaw, VLaw, lattice_floor_scalar
from lobscale.tails import fit_tail


def test_pareto_tail_exponent():
    x = np.random.default_rng(1).pareto(2.0, 100_000) + 1.0
    fit = fit_tail(x, 0.05)
    assert fit.exponent == pytest.approx(2.0, abs=0.1)
    assert fit.power_law


def test_exponential_flagged_as_not_power_law():
    fit = fit_tail(np.random.default_rng(2).exponential(size=100_000), 0.05)
    assert not fit.power_law


def test_constant_data_rejected():
    with pytest.raises(DegenerateError):
        fit_tail(np.ones(10_000))
    with pytest.raises(DegenerateError):
        fit_tail(np.arange(50.0))


def test_u_law_moments():
    u = ULaw(0.25, 0.08)
    x = u.sample(np.random.default_rng(0), 400_000)
    assert u.mean == pytest.approx(0.01)
    assert x.mean() == pytest.approx(u.mean, rel=0.01)
    assert (x * x).mean() == pytest.approx(u.second_moment, rel=0.01)
    assert np.mean(x == 0) == pytest.approx(0.75, abs=0.005)


@pytest.mark.parametrize("u,rho,c", [(2.8, 0.02, 1.0), (2.3, 0.02, 1.0), (1.5, 0.1, 0.5)])
def test_v_law_density_normalisation(u, rho, c):
    law = VLaw(u, rho, c)
    dens = lambda y, cap: (u - 1) * (rho + y) ** -u / (rho ** (1 - u) - (rho + cap) ** (1 - u)) * (u - 1) ** 0
    neg = integrate.quad(lambda y: dens(y, 1.0), 0, 1)[0] / (u - 1)
    assert law.cdf(0.0) == pytest.approx(0.5)
    assert law.cdf(-1.0) == 0.0 and law.cdf(c) == pytest.approx(1.0)
    assert neg * (u - 1) == pytest.approx(1.0, rel=1e-8)
    mean_num = 0.5 * integrate.quad(lambda y: y * dens(y, c), 0, c)[0] - 0.5 * integrate.quad(lambda y: y * dens(y, 1.0), 0, 1)[0]
    assert law.mean() == pytest.approx(mean_num, rel=1e-8, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-9, 1 - 1e-9), st.sampled_from([(2.8, 0.02, 1.0), (2.3, 0.02, 1.0), (1.2, 0.5, 3.0)]))
def test_v_quantile_inverts_cdf(w, prm):
    law = VLaw(*prm)
    x = law.quantile(w)
    assert -1.0 <= x <= prm[2]
    assert law.cdf(x) == pytest.approx(w, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 1.0, exclude_max=True), st.floats(0.05, 1.0), st.floats(1e-3, 10.0))
def test_u_quantile_inverts_cdf(w, r, xi):
    law = ULaw(r, xi)
    x = law.quantile(w)
    assert 0.0 <= x <= xi
    if w >= 1 - r:
        assert law.cdf(x) == pytest.approx(w, abs=1e-9)
    else:
        assert x == 0.0


def test_quantile_preserves_shape():
    assert ULaw(0.5, 1.0).quantile(np.full((2, 3), 0.75)).shape == (2, 3)
    assert isinstance(VLaw(2.8, 0.02).quantile(0.3), float)


def test_law_parameters_validated():
    for bad in (lambda: ULaw(0.0, 1.0), lambda: ULaw(0.5, 0.0), lambda: VLaw(1.0, 0.02), lambda: VLaw(2.8, 0.0)):
        with pytest.raises(ConfigError):
            bad()


def test_lattice_floor_scalar_matches_core():
    from lobscale.core import lattice_floor

    for x in np.linspace(-1, 1, 401):
        assert lattice_floor_scalar(x, 0.01) == pytest.approx(lattice_floor(x, 0.01), abs=1e-15)
