import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, special

from conftest import FAMILIES, family_params, params_at
from factorcop import copulas
from factorcop.copulas import CopulaDomainError, get_family
from factorcop.model import QuadratureRule

GRID = np.linspace(0.05, 0.95, 10)


# Parameter link -------------------------------------------------------------

@pytest.mark.parametrize("family, s, expected", [
    ("clayton", 0.0, 2.0),
    ("gaussian", 0.0, 0.0),
    ("gumbel", 1.0, 1.0 + math.e),
    ("frank", 2.5, 2.5),
    ("student", 0.3, math.tanh(0.3)),
])
def test_param_from_predictor_examples(family, s, expected):
    assert copulas.param_from_predictor(family, s) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("family", FAMILIES)
def test_param_from_predictor_rejects_non_finite(family):
    with pytest.raises(CopulaDomainError):
        copulas.param_from_predictor(family, np.nan)
    with pytest.raises(CopulaDomainError):
        copulas.param_from_predictor(family, np.inf)


@pytest.mark.parametrize("family", FAMILIES)
@given(s=st.floats(-3, 3))
def test_predictor_round_trip(family, s):
    fam = get_family(family)
    p = fam.param_from_predictor(s)
    fam.check_param(p)
    assert fam.predictor_from_param(p) == pytest.approx(s, abs=1e-9)


# cdf ------------------------------------------------------------------------

def test_clayton_cdf_examples():
    assert copulas.cdf("clayton", 2.0, 0.5, 0.5) == pytest.approx(7 ** -0.5, abs=1e-12)
    assert copulas.cdf("clayton", 1e-9, 0.5, 0.5) == pytest.approx(0.25, abs=1e-8)


@pytest.mark.parametrize("family, param", family_params())
def test_cdf_uniform_margins_and_grounded(family, param):
    fam = get_family(family)
    u = np.linspace(0.0, 1.0, 21)
    assert np.max(np.abs(fam.cdf(param, u, 1.0) - u)) < 1e-12
    assert np.max(np.abs(fam.cdf(param, 1.0, u) - u)) < 1e-12
    assert np.max(np.abs(fam.cdf(param, u, 0.0))) < 1e-12
    assert np.max(np.abs(fam.cdf(param, 0.0, u))) < 1e-12


@pytest.mark.parametrize("family, param", family_params((-0.3, 0.2, 0.5, 0.7)))
def test_cdf_two_increasing(family, param):
    fam = get_family(family)
    g = np.linspace(0.0, 1.0, 26)
    c = fam.cdf(param, g[:, None], g[None, :])
    vol = c[1:, 1:] - c[1:, :-1] - c[:-1, 1:] + c[:-1, :-1]
    assert vol.min() >= -1e-12


@pytest.mark.parametrize("family", FAMILIES)
def test_cdf_rejects_invalid_param(family):
    bad = {"clayton": -1.0, "gumbel": 0.5, "frank": np.nan, "gaussian": 1.5,
           "student": -2.0}[family]
    with pytest.raises(CopulaDomainError):
        get_family(family).cdf(bad, 0.5, 0.5)


# h-function --------------------------------------------------------------------

def test_gaussian_independence_hfunc_is_identity():
    u = np.linspace(0.01, 0.99, 9)
    for v in (0.1, 0.5, 0.9):
        assert np.allclose(copulas.hfunc("gaussian", 0.0, u, v), u, atol=1e-14)
    assert copulas.hfunc("gaussian", 0.5, 0.5, 0.5) == pytest.approx(0.5, abs=1e-14)


def test_clayton_hfunc_example_matches_cdf_derivative():
    h = 1e-6
    fd = (copulas.cdf("clayton", 2.0, 0.3, 0.7 + h) - copulas.cdf("clayton", 2.0, 0.3, 0.7 - h)) / (2 * h)
    assert copulas.hfunc("clayton", 2.0, 0.3, 0.7) == pytest.approx(fd, rel=1e-7)


@pytest.mark.parametrize("family, param", family_params((-0.3, 0.2, 0.5, 0.7)))
def test_hfunc_matches_fd_of_cdf(family, param):
    fam = get_family(family)
    u, v = np.meshgrid(GRID, GRID)
    h = 1e-5
    fd = (fam.cdf(param, u, v + h) - fam.cdf(param, u, v - h)) / (2 * h)
    hv = fam.hfunc(param, u, v)
    # relative error, floored where the conditional cdf is nearly zero
    assert np.max(np.abs(hv - fd) / np.maximum(np.abs(fd), 1e-4)) < 1e-5


@pytest.mark.parametrize("family, param", family_params((-0.3, 0.2, 0.5, 0.7)))
def test_hfunc_integrates_to_u(family, param):
    fam = get_family(family)
    for u in (0.1, 0.37, 0.8):
        val, _ = integrate.quad(lambda v: float(fam.hfunc(param, u, v)), 0, 1,
                                epsabs=1e-12, epsrel=1e-12, limit=400, points=[u])
        assert abs(val - u) < 1e-8


@pytest.mark.parametrize("family", FAMILIES)
@given(u1=st.floats(0, 1), u2=st.floats(0, 1), v=st.floats(0.001, 0.999),
       tau=st.floats(0.05, 0.8))
def test_hfunc_monotone_in_u_and_bounded(family, u1, u2, v, tau):
    fam = get_family(family)
    p = fam.tau_to_param(min(tau, 0.9) if family != "frank" else min(tau, 0.85))
    lo, hi = sorted((u1, u2))
    h_lo, h_hi = fam.hfunc(p, lo, v), fam.hfunc(p, hi, v)
    assert 0.0 <= h_lo <= h_hi + 1e-15 <= 1.0 + 1e-15


@pytest.mark.parametrize("family", FAMILIES)
def test_hfunc_exact_at_support_ends(family):
    fam = get_family(family)
    p = params_at(family, (0.5,))[0]
    assert fam.hfunc(p, 0.0, 0.3) == 0.0
    assert fam.hfunc(p, 1.0, 0.3) == 1.0


def test_hfunc_rejects_v_outside_unit_interval():
    with pytest.raises(CopulaDomainError):
        copulas.hfunc("clayton", 2.0, 0.5, 1.5)


# Inverse h-function -------------------------------------------------------------

@pytest.mark.parametrize("family, param", family_params((-0.3, 0.2, 0.5, 0.7)))
def test_hinv_round_trip_on_grid(family, param):
    fam = get_family(family)
    u, v = np.meshgrid(GRID, GRID)
    back = fam.hinv(param, fam.hfunc(param, u, v), v)
    # w carries about 1e-16 absolute error, so u is recoverable to eps / density
    tol = 1e-8 + 1e-15 / fam.pdf(param, u, v)
    assert np.all(np.abs(back - u) < tol)


@pytest.mark.parametrize("family", FAMILIES)
def test_hinv_example_point(family):
    fam = get_family(family)
    p = params_at(family, (0.5,))[0]
    assert fam.hinv(p, fam.hfunc(p, 0.3, 0.7), 0.7) == pytest.approx(0.3, abs=1e-8)


@pytest.mark.parametrize("family", FAMILIES)
@given(w=st.floats(1e-6, 1 - 1e-6), v=st.floats(1e-4, 1 - 1e-4), tau=st.floats(0.05, 0.75))
def test_hinv_is_right_inverse(family, w, v, tau):
    fam = get_family(family)
    p = fam.tau_to_param(tau)
    u = fam.hinv(p, w, v)
    assert 0.0 <= u <= 1.0
    if 1e-9 < u < 1 - 1e-9:
        assert abs(fam.hfunc(p, u, v) - w) < 1e-8


def test_hinv_independence_is_identity():
    w = np.linspace(0.01, 0.99, 11)
    assert np.allclose(copulas.hinv("gaussian", 0.0, w, 0.4), w, atol=1e-14)


@pytest.mark.parametrize("rho", [-0.6, 0.3, 0.8])
def test_gaussian_closed_form_hinv_matches_root_solve(rho):
    fam = get_family("gaussian")
    w, v = np.meshgrid(GRID, GRID)
    closed = special.ndtr(np.sqrt(1 - rho**2) * special.ndtri(w) + rho * special.ndtri(v))
    assert np.max(np.abs(fam.hinv(rho, w, v) - closed)) < 1e-12
    assert np.max(np.abs(fam._hinv_numeric(rho, w, v) - closed)) < 1e-9


@pytest.mark.parametrize("family", ["clayton", "frank", "student"])
def test_closed_form_hinv_matches_root_solve(family):
    fam = get_family(family)
    p = params_at(family, (0.5,))[0]
    w, v = np.meshgrid(GRID, GRID)
    assert np.max(np.abs(fam.hinv(p, w, v) - fam._hinv_numeric(p, w, v))) < 1e-9


# Density -------------------------------------------------------------------------

def test_density_independence_and_frank_zero():
    u, v = np.meshgrid(GRID, GRID)
    assert np.allclose(copulas.density("gaussian", 0.0, u, v), 1.0, atol=1e-14)
    assert np.allclose(copulas.density("frank", 0.0, u, v), 1.0, atol=1e-12)
    assert np.allclose(copulas.density("frank", 1e-8, u, v), 1.0, atol=1e-7)


def test_clayton_density_matches_mixed_fd_of_cdf():
    h = 1e-4
    c = lambda a, b: copulas.cdf("clayton", 2.0, a, b)
    fd = (c(0.5 + h, 0.5 + h) - c(0.5 + h, 0.5 - h) - c(0.5 - h, 0.5 + h)
          + c(0.5 - h, 0.5 - h)) / (4 * h * h)
    assert copulas.density("clayton", 2.0, 0.5, 0.5) == pytest.approx(fd, rel=1e-6)


@pytest.mark.parametrize("family, param", family_params((-0.3, 0.2, 0.5)))
def test_density_nonnegative_and_integrates_to_one(family, param):
    fam = get_family(family)
    rule = QuadratureRule.gauss_legendre(200)
    u, v = np.meshgrid(rule.nodes, rule.nodes)
    dens = fam.pdf(param, u, v)
    assert np.all(dens >= 0)
    total = rule.weights @ dens @ rule.weights
    assert total == pytest.approx(1.0, abs=1e-4)


@pytest.mark.parametrize("family, param", family_params((-0.3, 0.2, 0.5, 0.7)))
def test_density_matches_fd_of_hfunc(family, param):
    fam = get_family(family)
    u, v = np.meshgrid(GRID, GRID)
    h = 1e-6
    fd = (fam.hfunc(param, u + h, v) - fam.hfunc(param, u - h, v)) / (2 * h)
    assert np.max(np.abs(fam.pdf(param, u, v) - fd) / np.maximum(fd, 1e-3)) < 1e-5


# Kendall's tau ---------------------------------------------------------------------

def test_tau_examples():
    assert copulas.tau("clayton", 2.0) == pytest.approx(0.5, abs=1e-14)
    assert copulas.tau("gaussian", 0.0) == 0.0
    assert copulas.tau("gumbel", 2.0) == pytest.approx(0.5, abs=1e-14)


def test_frank_tau_anchor():
    assert copulas.tau("frank", -1.648949) == pytest.approx(-0.178, abs=5e-4)


@pytest.mark.parametrize("family, param", family_params((-0.6, -0.3, 0.1, 0.3, 0.5, 0.7, 0.85)))
def test_tau_round_trip(family, param):
    fam = get_family(family)
    assert fam.tau_to_param(fam.tau(param)) == pytest.approx(param, rel=1e-8, abs=1e-8)


@pytest.mark.parametrize("family", FAMILIES)
@given(tau=st.floats(-0.9, 0.9))
def test_tau_to_param_property(family, tau):
    fam = get_family(family)
    try:
        p = fam.tau_to_param(tau)
    except CopulaDomainError:
        lower = 1e-12 if family == "clayton" else 0.0
        assert tau <= lower and family in ("clayton", "gumbel") or abs(tau) > 0.92
        return
    assert fam.tau(p) == pytest.approx(tau, abs=1e-8)


@pytest.mark.parametrize("family, tau", [("clayton", -0.2), ("gumbel", -0.1),
                                         ("frank", 0.95), ("gaussian", 1.0)])
def test_tau_out_of_range(family, tau):
    with pytest.raises(CopulaDomainError):
        copulas.tau_to_param(family, tau)


def test_family_lookup():
    assert get_family("Clayton").name == "clayton"
    assert get_family("student", df=7).df == 7
    with pytest.raises(CopulaDomainError):
        get_family("joe")
    with pytest.raises((CopulaDomainError, ValueError)):
        get_family("student", df=2.0)


# Analytic derivatives used by the score ----------------------------------------------

@pytest.mark.parametrize("family, param", family_params((-0.3, 0.2, 0.5)))
def test_analytic_derivatives_match_fd(family, param):
    fam = get_family(family)
    u, v = np.meshgrid(np.linspace(0.1, 0.9, 5), np.linspace(0.1, 0.9, 5))
    h = 1e-6
    du = (fam.logpdf(param, u + h, v) - fam.logpdf(param, u - h, v)) / (2 * h)
    dp = (fam.logpdf(param + h, u, v) - fam.logpdf(param - h, u, v)) / (2 * h)
    dh = (fam.hfunc(param + h, u, v) - fam.hfunc(param - h, u, v)) / (2 * h)
    assert np.allclose(fam.dlogpdf_du(param, u, v), du, rtol=1e-5, atol=1e-6)
    assert np.allclose(fam.dlogpdf_dparam(param, u, v), dp, rtol=1e-5, atol=1e-6)
    assert np.allclose(fam.dhfunc_dparam(param, u, v), dh, rtol=1e-5, atol=1e-7)
