import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special, stats

from factorcop.copulas import get_family
from factorcop.estimate import fit
from factorcop.margins import get_margin
from factorcop.model import ClusteredDataset, ModelSpec, QuadratureRule
from factorcop.predict import (PredictionError, cond_cdf, cond_mean, cond_quantile,
                               latent_posterior, link_curve, predict_clusters)
from factorcop.simulate import dgp
from oracles import COPULA_NAMES, lmm_instance, lmm_shrinkage

V_GRID = (0.02, 0.2, 0.5, 0.8, 0.98)


def copula_s(name, tau):
    cop = get_family(name)
    return float(cop.predictor_from_param(cop.tau_to_param(tau)))


# latent posterior ----------------------------------------------------------------

@pytest.mark.parametrize("margin", ["gaussian", "poisson", "bernoulli"])
def test_independence_posterior_is_uniform(margin, rng):
    spec = ModelSpec.make("gaussian", margin)
    theta = {"gaussian": [0.0, 0.0, 0.0], "poisson": [1.0, 0.0], "bernoulli": [0.2, 0.0]}[margin]
    y = {"gaussian": rng.normal(size=12), "poisson": rng.poisson(2.7, 12),
         "bernoulli": rng.integers(0, 2, 12)}[margin]
    data = ClusteredDataset.from_arrays(y, np.repeat([0, 1, 2], 4))
    for post in latent_posterior(spec, theta, data):
        assert np.allclose(post.density, 1.0, atol=1e-12)
        assert post.median == pytest.approx(0.5, abs=1e-9)
        assert post.mean == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("copula", COPULA_NAMES)
def test_single_observation_posterior_is_copula_density(copula):
    spec = ModelSpec.make(copula, "gaussian")
    theta = [0.0, 0.0, copula_s(copula, 0.4)]
    data = ClusteredDataset.from_arrays([-0.7, 0.4, 1.6], [0, 1, 2])
    for post, y in zip(latent_posterior(spec, theta, data), data.y):
        u = special.ndtr(y)
        ref = spec.copula.pdf(float(spec.copula.param_from_predictor(theta[2])), u, post.nodes)
        assert np.allclose(post.density, ref, rtol=1e-7)


def test_gaussian_posterior_median_matches_mixed_model(rng):
    spec = ModelSpec.make("gaussian", "gaussian", ("x",))
    rule = QuadratureRule.gauss_legendre(100)
    checked = 0
    while checked < 50:
        data, p = lmm_instance(rng, K=10, n=int(rng.integers(1, 8)))
        posts = latent_posterior(spec, p["theta"], data, rule)
        resid = data.y - p["b"][0] - p["b"][1] * data.covariates["x"]
        for k, post in enumerate(posts):
            ebar = resid[data.cluster == k].mean()
            lam = lmm_shrinkage(data.sizes[k], p["rho"])
            assert abs(special.ndtri(post.median) - lam * ebar / p["sd_eta"]) < 1e-3
            checked += 1


def test_gaussian_prediction_matches_mixed_model(rng):
    spec = ModelSpec.make("gaussian", "gaussian", ("x",))
    rule = QuadratureRule.gauss_legendre(100)
    data, p = lmm_instance(rng, K=20, n=5)
    _, table = predict_clusters(spec, p["theta"], data, rule)
    resid = data.y - p["b"][0] - p["b"][1] * data.covariates["x"]
    ebar = np.array([resid[data.cluster == k].mean() for k in range(20)])
    lam = lmm_shrinkage(5, p["rho"])
    ref = p["b"][0] + p["b"][1] * data.covariates["x"] + lam * ebar[data.cluster]
    assert np.max(np.abs(table["mean"] - ref)) < 1e-4


@pytest.mark.parametrize("name", ["exp1", "exp4", "exp5", "exp7"])
def test_posterior_normalized_for_fitted_models(name):
    draw = dgp(name, 30, rng=np.random.default_rng(31))
    res = fit(draw.fit_spec(), draw.data)
    rule = QuadratureRule.gauss_legendre(res.quad_nodes)
    for post in latent_posterior(res.spec, res.theta, draw.data, rule):
        assert np.all(post.density >= 0)
        assert abs(np.sum(post.density * post.weights) - 1) < 1e-8
        assert 0 < post.median < 1 and 0 < post.mean < 1


def test_grid_and_exact_medians_agree_roughly():
    draw = dgp("exp1", 10, rng=np.random.default_rng(2))
    exact = latent_posterior(draw.spec, draw.theta, draw.data, median="exact")
    grid = latent_posterior(draw.spec, draw.theta, draw.data, median="grid")
    assert max(abs(a.median - b.median) for a, b in zip(exact, grid)) < 0.05
    means = latent_posterior(draw.spec, draw.theta, draw.data, estimator="mean")
    assert all(p.point == p.mean for p in means)
    with pytest.raises(PredictionError):
        latent_posterior(draw.spec, draw.theta, draw.data, median="mode")
    with pytest.raises(PredictionError):
        latent_posterior(draw.spec, draw.theta, draw.data, estimator="mode")


def test_impossible_cluster_gets_uniform_posterior():
    spec = ModelSpec.make("clayton", "poisson")
    data = ClusteredDataset.from_arrays([1, 2000, 0, 1], ["a", "a", "b", "b"])
    posts = latent_posterior(spec, [0.0, 0.5], data)
    assert posts[0].degenerate and posts[0].cluster == "a"
    assert posts[0].median == 0.5
    assert np.allclose(posts[0].density, 1.0)
    assert not posts[1].degenerate


# conditional distribution ---------------------------------------------------------

def test_cond_cdf_independence_and_closed_forms():
    y = np.linspace(-2, 4, 9)
    ind = ModelSpec.make("gaussian", "gaussian")
    assert np.allclose(cond_cdf(ind, [1.0, 0.0, 0.0], y, v=0.3), special.ndtr(y - 1), atol=1e-15)
    rho, mu, sd = 0.7, 1.0, 2.0
    for v in V_GRID:
        got = cond_cdf(ind, [mu, math.log(sd), math.atanh(rho)], y, v=v)
        ref = special.ndtr((y - mu - sd * rho * special.ndtri(v)) / (sd * math.sqrt(1 - rho**2)))
        assert np.allclose(got, ref, atol=1e-13)
    spec = ModelSpec.make("frank", "bernoulli")
    p = special.expit(0.4)
    assert cond_cdf(spec, [0.4, 3.0], 0.0, v=0.6) == pytest.approx(
        float(get_family("frank").hfunc(3.0, 1 - p, 0.6)), abs=1e-15)


@pytest.mark.parametrize("copula", COPULA_NAMES)
def test_cond_cdf_monotone_with_limits(copula):
    spec = ModelSpec.make(copula, "poisson")
    theta = [1.2, copula_s(copula, 0.5)]
    ys = np.arange(-1, 60, dtype=float)
    for v in V_GRID:
        c = cond_cdf(spec, theta, ys, v=v)
        assert np.all(np.diff(c) >= 0)
        assert c[0] == 0.0 and c[-1] > 1 - 1e-10
        assert cond_cdf(spec, theta, 2.5, v=v) == cond_cdf(spec, theta, 2.0, v=v)


@pytest.mark.parametrize("copula", COPULA_NAMES)
def test_cond_quantile_round_trip_continuous(copula):
    spec = ModelSpec.make(copula, "gaussian")
    theta = [2.0, 0.3, copula_s(copula, 0.6)]
    u, v = np.meshgrid(np.linspace(0.02, 0.98, 13), np.linspace(0.02, 0.98, 13))
    y = cond_quantile(spec, theta, u.ravel(), v=v.ravel())
    assert np.max(np.abs(cond_cdf(spec, theta, y, v=v.ravel()) - u.ravel())) < 1e-8


@pytest.mark.parametrize("margin", ["poisson", "bernoulli"])
@given(u=st.floats(1e-4, 1 - 1e-4), v=st.floats(1e-3, 1 - 1e-3))
def test_cond_quantile_left_inverse_discrete(margin, u, v):
    spec = ModelSpec.make("clayton", margin)
    theta = [1.0, 0.0]
    y = cond_quantile(spec, theta, u, v=v)
    assert cond_cdf(spec, theta, y, v=v) >= u - 1e-12
    if y > 0:
        assert cond_cdf(spec, theta, y - 1, v=v) < u + 1e-12


def test_cond_quantile_independence_and_gaussian_median():
    ind = ModelSpec.make("gaussian", "poisson")
    u = np.array([0.1, 0.5, 0.9])
    assert np.array_equal(cond_quantile(ind, [math.log(3.0), 0.0], u, v=0.4),
                          stats.poisson(3.0).ppf(u))
    spec = ModelSpec.make("gaussian", "gaussian", ("x",))
    rho, sd = 0.6, 1.5
    x = np.array([0.0, 1.0, 2.0])
    theta = [1.0, 0.5, math.log(sd), math.atanh(rho)]
    for v in V_GRID:
        med = cond_quantile(spec, theta, np.full(3, 0.5), x, v=v)
        assert np.allclose(med, 1 + 0.5 * x + rho * sd * special.ndtri(v), atol=1e-10)


def test_cond_functions_validate_levels():
    spec = ModelSpec.make("frank", "gaussian")
    with pytest.raises(PredictionError):
        cond_cdf(spec, [0, 0, 1], 0.0, v=1.0)
    with pytest.raises(PredictionError):
        cond_quantile(spec, [0, 0, 1], 0.0, v=0.5)
    with pytest.raises(PredictionError):
        cond_mean(spec, [0, 0, 1], v=0.0)
    with pytest.raises(PredictionError):
        cond_mean(spec, [0, 0, 1], v=0.5, method="simpson")


# conditional mean ---------------------------------------------------------------------

@pytest.mark.parametrize("copula", COPULA_NAMES)
def test_cond_mean_two_paths_agree(copula):
    spec = ModelSpec.make(copula, "gaussian")
    theta = [3.0, 0.4, copula_s(copula, 0.5)]
    v = np.array(V_GRID)
    a = cond_mean(spec, theta, v=v, method="quantile")
    b = cond_mean(spec, theta, v=v, method="kappa")
    assert np.max(np.abs(a - b) / np.abs(b)) < 1e-6


def test_cond_mean_independence_is_marginal_mean():
    assert cond_mean(ModelSpec.make("gaussian", "gaussian"), [2.5, 0.3, 0.0], v=0.2) == \
        pytest.approx(2.5, abs=1e-10)
    assert cond_mean(ModelSpec.make("gaussian", "poisson"), [math.log(4.0), 0.0], v=0.9) == \
        pytest.approx(4.0, rel=1e-10)
    assert cond_mean(ModelSpec.make("gaussian", "bernoulli"), [0.3, 0.0], v=0.7) == \
        pytest.approx(special.expit(0.3), abs=1e-15)


def test_cond_mean_gaussian_closed_form():
    spec = ModelSpec.make("gaussian", "gaussian")
    rho, sd = 0.8, 2.0
    v = np.array(V_GRID)
    got = cond_mean(spec, [1.0, math.log(sd), math.atanh(rho)], v=v)
    assert np.allclose(got, 1 + rho * sd * special.ndtri(v), atol=1e-8)


def test_count_cond_mean_matches_direct_sum():
    spec = ModelSpec.make("gumbel", "poisson")
    theta = [1.5, copula_s("gumbel", 0.5)]
    ys = np.arange(0, 200, dtype=float)
    for v in V_GRID:
        f = cond_cdf(spec, theta, ys, v=v)
        pmf = np.diff(np.concatenate([[0.0], f]))
        assert cond_mean(spec, theta, v=v) == pytest.approx(float(ys @ pmf), rel=1e-10)


@pytest.mark.parametrize("margin", ["gaussian", "poisson", "bernoulli"])
def test_frank_negative_tau_gives_decreasing_mean(margin):
    spec = ModelSpec.make("frank", margin)
    theta = {"gaussian": [0.0, 0.0], "poisson": [1.0], "bernoulli": [0.0]}[margin]
    theta = theta + [copula_s("frank", -0.3)]
    v = np.linspace(0.05, 0.95, 19)
    assert np.all(np.diff(cond_mean(spec, theta, v=v)) < 0)
    theta[-1] = copula_s("frank", 0.3)
    assert np.all(np.diff(cond_mean(spec, theta, v=v)) > 0)


def test_cond_mean_with_covariates_broadcasts():
    spec = ModelSpec.make("clayton", "poisson", ("x",), ("u",))
    x = np.array([0.0, 0.5, 1.0])
    u = np.array([0.2, 0.2, 0.9])
    out = cond_mean(spec, [0.5, 0.3, 0.1, -0.5], x, u, np.array([0.3, 0.5, 0.7]))
    one = [cond_mean(spec, [0.5, 0.3, 0.1, -0.5], x[i:i + 1], u[i:i + 1], v)
           for i, v in enumerate((0.3, 0.5, 0.7))]
    assert out.shape == (3,)
    assert all(isinstance(o, float) for o in one)
    assert np.allclose(out, one, rtol=1e-14)


# link curves --------------------------------------------------------------------------

def test_link_curve_independence_equals_linear_predictor():
    spec = ModelSpec.make("gaussian", "bernoulli", ("x",))
    x = np.linspace(-4, 6, 41)
    curves = link_curve(spec, [-1.0, 0.5, 0.0], x)
    assert np.allclose(curves, -1 + 0.5 * x, atol=1e-10)


def test_link_curve_gaussian_shapes():
    spec = ModelSpec.make("gaussian", "bernoulli", ("x",))
    x = np.linspace(-4, 6, 101)
    curves = link_curve(spec, [-1.0, 0.5, math.atanh(0.9)], x, v_list=(0.1, 0.5, 0.9))
    slopes = np.diff(curves, axis=1) / np.diff(x)
    for i in range(3):
        assert np.ptp(slopes[i]) > 1e-3                  # not affine
        for j in range(i + 1, 3):
            assert np.max(np.abs(slopes[i] - slopes[j])) > 1e-3   # not parallel
    assert np.all(curves[0] < curves[1]) and np.all(curves[1] < curves[2])
    # radial symmetry: at s(x) = 0 the v = 0.5 curve passes through 0
    mid = link_curve(spec, [-1.0, 0.5, math.atanh(0.9)], np.array([2.0]), v_list=(0.5,))
    assert abs(mid[0, 0]) < 1e-12


def test_link_curve_needs_bernoulli():
    with pytest.raises(PredictionError):
        link_curve(ModelSpec.make("gaussian", "poisson", ("x",)), [0.0, 1.0, 0.0], [0.0, 1.0])


# cluster predictions ------------------------------------------------------------------

def test_predict_clusters_table():
    draw = dgp("exp4", 8, rng=np.random.default_rng(4))
    posts, table = predict_clusters(draw.spec, draw.theta, draw.data, quantiles=(0.1, 0.9))
    assert len(posts) == 8
    assert set(table) == {"cluster", "v_hat", "mean", "q0.1", "q0.9"}
    assert all(len(col) == draw.data.n_obs for col in table.values())
    assert np.all(table["q0.1"] <= table["q0.9"])
    assert np.array_equal(table["v_hat"], np.array([p.median for p in posts])[draw.data.cluster])
    assert get_margin("poisson").discrete and np.all(table["q0.9"] == np.round(table["q0.9"]))
