import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate
from scipy.special import logsumexp

from factorcop.copulas import get_family
from factorcop.likelihood import (LikelihoodError, cluster_loglik, evaluate, fd_score,
                                  obs_density, per_cluster_scores, score, total_loglik)
from factorcop.margins import get_margin
from factorcop.model import ClusteredDataset, ModelSpec, QuadratureRule
from factorcop.simulate import dgp, sample_dataset
from oracles import (COPULA_NAMES, MARGIN_NAMES, lmm_cluster_loglik, lmm_instance,
                     score_case, score_rel_error)


def copula_s(name, tau):
    cop = get_family(name)
    return float(cop.predictor_from_param(cop.tau_to_param(tau)))


def margin_theta(margin):
    return {"gaussian": [0.3, -0.2], "poisson": [0.8], "bernoulli": [-0.4]}[margin]


def margin_param(margin):
    return {"gaussian": (0.3, math.exp(-0.2)), "poisson": (math.exp(0.8),),
            "bernoulli": (1 / (1 + math.exp(0.4)),)}[margin]


def sample_y(margin, rng, size):
    if margin == "gaussian":
        return rng.normal(0.3, math.exp(-0.2), size)
    if margin == "poisson":
        return rng.poisson(math.exp(0.8), size).astype(float)
    return (rng.uniform(size=size) < 0.4).astype(float)


# quadrature rule -----------------------------------------------------------------

@given(n=st.integers(1, 300), grading=st.integers(1, 3))
def test_quadrature_rule_invariants(n, grading):
    rule = QuadratureRule.gauss_legendre(n, grading)
    assert abs(rule.weights.sum() - 1) < 1e-12
    assert np.all(rule.weights > 0)
    assert np.all((rule.nodes > 0) & (rule.nodes < 1))
    assert np.all(np.diff(rule.nodes) > 0)


def test_quadrature_rule_plain_map():
    rule = QuadratureRule.gauss_legendre(5, grading=1)
    x, w = np.polynomial.legendre.leggauss(5)
    assert np.allclose(rule.nodes, (x + 1) / 2, atol=1e-15)
    assert np.allclose(rule.weights, w / 2, atol=1e-15)


@pytest.mark.parametrize("n, grading", [(0, 3), (10, 0), (51, 5)])
def test_quadrature_rule_rejects_bad_sizes(n, grading):
    with pytest.raises(ValueError):
        QuadratureRule.gauss_legendre(n, grading)


# observation density ----------------------------------------------------------------

@pytest.mark.parametrize("margin", MARGIN_NAMES)
def test_obs_density_independence_is_marginal(margin, rng):
    spec = ModelSpec.make("gaussian", margin)
    theta = margin_theta(margin) + [0.0]
    y = sample_y(margin, rng, 20)
    ref = get_margin(margin).pdf(margin_param(margin), y)
    for v in (0.05, 0.5, 0.93):
        assert np.allclose(obs_density(spec, theta, y, v=v), ref, rtol=1e-13, atol=0)


@pytest.mark.parametrize("copula", COPULA_NAMES)
def test_bernoulli_density_telescopes(copula):
    spec = ModelSpec.make(copula, "bernoulli")
    theta = [0.7, copula_s(copula, 0.6)]
    v = np.array([0.01, 0.3, 0.77, 0.999])
    total = obs_density(spec, theta, [0.0], v=v) + obs_density(spec, theta, [1.0], v=v)
    assert np.allclose(total, 1.0, atol=1e-14)


def test_obs_density_composed_example():
    spec = ModelSpec.make("clayton", "gaussian")
    theta = [10.0, 0.0, 0.0]                  # Clayton link 2 exp(s) gives theta = 2
    val = float(obs_density(spec, theta, [10.0], v=0.5)[0])
    clayton = get_family("clayton")
    ref = get_margin("gaussian").pdf((10.0, 1.0), 10.0) * clayton.pdf(2.0, 0.5, 0.5)
    assert val == pytest.approx(float(ref), rel=1e-14)
    # (1 + t) (uv)^(-1-t) (u^-t + v^-t - 1)^(-2-1/t) at t = 2, u = v = 1/2
    assert float(clayton.pdf(2.0, 0.5, 0.5)) == pytest.approx(
        3 * 0.25 ** -3 * 7 ** -2.5, rel=1e-14)


@pytest.mark.parametrize("copula", COPULA_NAMES)
def test_continuous_density_integrates_to_one(copula):
    spec = ModelSpec.make(copula, "gaussian")
    theta = [0.0, 0.0, copula_s(copula, 0.5)]
    for v in (0.1, 0.5, 0.9):
        val, _ = integrate.quad(lambda y: float(obs_density(spec, theta, [y], v=v)[0]),
                                -12, 12, epsabs=1e-11, limit=400)
        assert abs(val - 1) < 1e-8


@pytest.mark.parametrize("copula", COPULA_NAMES)
def test_count_density_sums_to_one(copula, rng):
    spec = ModelSpec.make(copula, "poisson")
    pois = get_margin("poisson")
    for _ in range(10):
        log_rate = rng.uniform(-1, 3)
        v = rng.uniform(0.01, 0.99)
        theta = [log_rate, copula_s(copula, rng.uniform(0.1, 0.8))]
        top = pois.support_max((math.exp(log_rate),), 1e-16) + 20
        ys = np.arange(0, top + 1, dtype=float)
        total = float(obs_density(spec, theta, ys, v=v).sum())
        assert abs(total - 1) < 1e-10


def test_obs_density_rejects_v_outside():
    spec = ModelSpec.make("frank", "gaussian")
    for v in (0.0, 1.0, 1.5):
        with pytest.raises(LikelihoodError):
            obs_density(spec, [0.0, 0.0, 1.0], [0.2], v=v)


def test_domain_error_names_observation():
    spec = ModelSpec.make("clayton", "poisson", ("x",))
    data = ClusteredDataset.from_arrays([1, 2, 3, 4], [0, 0, 1, 1],
                                        {"x": [0.0, 0.0, 0.0, 1.0]})
    with pytest.raises(LikelihoodError, match="observation 3"), np.errstate(over="ignore"):
        total_loglik(spec, [0.0, 1000.0, 0.0], data)


# cluster likelihood ----------------------------------------------------------------

@pytest.mark.parametrize("copula", COPULA_NAMES)
@pytest.mark.parametrize("margin", MARGIN_NAMES)
def test_single_observation_cluster_is_marginal(copula, margin, rng):
    spec = ModelSpec.make(copula, margin)
    for tau in (0.2, 0.5, 0.85):
        theta = margin_theta(margin) + [copula_s(copula, tau)]
        for y in sample_y(margin, rng, 5):
            ll = cluster_loglik(spec, theta, [y])
            ref = float(get_margin(margin).logpdf(margin_param(margin), y))
            assert abs(ll - ref) < 1e-12


def test_single_observation_clusters_inside_dataset(rng):
    spec = ModelSpec.make("clayton", "gaussian")
    theta = [0.3, -0.2, copula_s("clayton", 0.8)]
    y = rng.normal(size=7)
    data = ClusteredDataset.from_arrays(y, np.arange(7))
    ref = get_margin("gaussian").logpdf(margin_param("gaussian"), data.y)
    ev = evaluate(spec, theta, data)
    assert np.allclose(ev.cluster_loglik, ref, rtol=0, atol=1e-12)
    assert np.allclose(ev.score[-1], 0.0)
    assert np.allclose(np.exp(ev.log_post).sum(axis=1), 1.0, atol=1e-12)


@pytest.mark.parametrize("margin", MARGIN_NAMES)
def test_independence_copula_sums_marginals(margin, rng):
    spec = ModelSpec.make("gaussian", margin)
    theta = margin_theta(margin) + [0.0]
    y = sample_y(margin, rng, 6)
    ref = float(np.sum(get_margin(margin).logpdf(margin_param(margin), y)))
    assert cluster_loglik(spec, theta, y) == pytest.approx(ref, abs=1e-12)


def test_gaussian_copula_matches_equicorrelated_normal(rng):
    spec = ModelSpec.make("gaussian", "gaussian", ("x",))
    rule = QuadratureRule.gauss_legendre(100)
    for _ in range(5):
        data, p = lmm_instance(rng)
        ev = evaluate(spec, p["theta"], data, rule, grad=False)
        for k, start in enumerate(data.starts):
            sl = slice(start, start + data.sizes[k])
            mean = p["b"][0] + p["b"][1] * data.covariates["x"][sl]
            ref = lmm_cluster_loglik(data.y[sl], mean, p["sd"], p["rho"])
            assert abs(ev.cluster_loglik[k] - ref) < 1e-6 * abs(ref)


@given(perm_seed=st.integers(0, 2**32 - 1))
def test_cluster_loglik_permutation_invariant(perm_seed):
    spec = ModelSpec.make("gumbel", "poisson", ("x",), ("x",))
    rng = np.random.default_rng(7)
    x = rng.normal(size=8)
    y = rng.poisson(2.0, size=8).astype(float)
    theta = [0.6, 0.3, 0.4, 0.2]
    base = cluster_loglik(spec, theta, y, x, x)
    p = np.random.default_rng(perm_seed).permutation(8)
    assert abs(cluster_loglik(spec, theta, y[p], x[p], x[p]) - base) < 1e-9


def test_quadrature_convergence_on_exp1():
    draw = dgp("exp1", 100, rng=np.random.default_rng(11))
    ll = [total_loglik(draw.spec, draw.theta, draw.data, QuadratureRule.gauss_legendre(q))
          for q in (64, 256)]
    assert abs(ll[0] - ll[1]) < 1e-6 * abs(ll[1])


@pytest.mark.parametrize("copula", COPULA_NAMES)
def test_logsumexp_matches_naive(copula, rng):
    spec = ModelSpec.make(copula, "gaussian")
    theta = [0.0, 0.0, copula_s(copula, 0.4)]
    rule = QuadratureRule.gauss_legendre(30)
    y = rng.normal(size=4)
    f = obs_density(spec, theta, y, v=rule.nodes)
    naive = math.log(float(np.sum(rule.weights * np.prod(f, axis=0))))
    assert abs(cluster_loglik(spec, theta, y, rule=rule) - naive) < 1e-10


def test_long_cluster_does_not_underflow(rng):
    spec = ModelSpec.make("frank", "gaussian")
    theta = [0.0, 0.0, 3.0]
    y = rng.normal(size=3000)
    ll = cluster_loglik(spec, theta, y)
    assert np.isfinite(ll) and ll < -1000
    rule = QuadratureRule.gauss_legendre(64)
    f = obs_density(spec, theta, y, v=rule.nodes)
    assert np.sum(rule.weights * np.prod(f, axis=0)) == 0.0  # naive product underflows


def test_impossible_cluster_reports_neg_inf():
    spec = ModelSpec.make("clayton", "poisson")
    # rate 1 makes y = 2000 underflow to probability zero
    data = ClusteredDataset.from_arrays([1, 2000, 0, 1, 2000], [0, 0, 1, 1, 2])
    ev = evaluate(spec, [0.0, 0.5], data)
    assert list(ev.neg_inf_clusters) == [0, 2]
    assert ev.loglik == -np.inf
    assert np.isfinite(ev.cluster_loglik[1])
    assert np.all(np.isfinite(ev.cluster_scores))


def test_design_mismatch_raises():
    spec = ModelSpec.make("frank", "gaussian", ("x",))
    data = ClusteredDataset.from_arrays([0.1, 0.2], [0, 0], {"x": [1.0, 2.0]})
    with pytest.raises(ValueError):
        total_loglik(spec, [0.0, 0.0, 1.0], data)


def test_evaluation_is_bit_stable(rng):
    draw = dgp("exp4", 30, rng=rng)
    a = evaluate(draw.spec, draw.theta, draw.data)
    b = evaluate(draw.spec, draw.theta, draw.data)
    assert a.loglik == b.loglik
    assert np.array_equal(a.cluster_scores, b.cluster_scores)


# score -----------------------------------------------------------------------------

@pytest.mark.parametrize("copula", COPULA_NAMES)
@pytest.mark.parametrize("margin", MARGIN_NAMES)
def test_score_matches_finite_differences(copula, margin):
    rng = np.random.default_rng([COPULA_NAMES.index(copula), MARGIN_NAMES.index(margin)])
    spec, theta, data = score_case(copula, margin, rng)
    assert score_rel_error(score(spec, theta, data), fd_score(spec, theta, data)) < 1e-4


def test_score_on_exp1_matches_fd():
    draw = dgp("exp1", 40, rng=np.random.default_rng(3))
    theta = draw.theta + np.array([0.05, -0.1, 0.2])
    g = score(draw.spec, theta, draw.data)
    fd = fd_score(draw.spec, theta, draw.data, step=1e-5)
    assert score_rel_error(g, fd) < 1e-4


def test_independence_score_is_normal_equations(rng):
    spec = ModelSpec.make("gaussian", "gaussian", ("x",))
    x = rng.normal(size=40)
    y = 1 + 0.5 * x + rng.normal(size=40)
    data = ClusteredDataset.from_arrays(y, np.repeat(np.arange(8), 5), {"x": x})
    mu_b, sd = np.array([0.8, 0.3]), 1.3
    g = score(spec, [mu_b[0], mu_b[1], math.log(sd), 0.0], data)
    resid = data.y - mu_b[0] - mu_b[1] * data.covariates["x"]
    xd = np.column_stack([np.ones(40), data.covariates["x"]])
    assert np.allclose(g[:2], xd.T @ resid / sd**2, rtol=1e-12)
    assert g[2] == pytest.approx(np.sum(resid**2 / sd**2 - 1), rel=1e-12)


def test_mean_score_at_truth_is_small():
    draw = dgp("exp1", 2000, rng=np.random.default_rng(5))
    s = per_cluster_scores(draw.spec, draw.theta, draw.data)
    mean = s.mean(axis=0)
    mc_se = s.std(axis=0, ddof=1) / math.sqrt(s.shape[0])
    assert np.all(np.abs(mean) < 3 * mc_se)


def test_per_cluster_scores_rows_sum(rng):
    draw = dgp("exp3", 25, rng=rng)
    ev = evaluate(draw.spec, draw.theta, draw.data)
    assert np.allclose(ev.cluster_scores.sum(axis=0), score(draw.spec, draw.theta, draw.data),
                       rtol=1e-12, atol=1e-12)
    assert ev.cluster_scores.shape == (25, draw.spec.n_params)


def test_single_cluster_scores_equal_score(rng):
    draw = dgp("exp1", 1, n=12, rng=rng)
    s = per_cluster_scores(draw.spec, draw.theta, draw.data)
    assert np.array_equal(s[0], score(draw.spec, draw.theta, draw.data))


def test_outer_product_is_psd(rng):
    draw = dgp("exp7", 60, rng=rng)
    s = per_cluster_scores(draw.spec, draw.theta, draw.data)
    eig = np.linalg.eigvalsh(s.T @ s / draw.data.n_obs)
    assert eig.min() > -1e-10 * eig.max()


def test_unbalanced_clusters(rng):
    spec = ModelSpec.make("gumbel", "gaussian")
    theta = [0.0, 0.0, copula_s("gumbel", 0.5)]
    data, _ = sample_dataset(spec, theta, [1, 7, 2, 1, 15], rng=rng)
    ev = evaluate(spec, theta, data)
    assert ev.cluster_loglik.shape == (5,)
    assert score_rel_error(ev.score, fd_score(spec, theta, data)) < 1e-4
    total = sum(cluster_loglik(spec, theta, data.y[s:s + n])
                for s, n in zip(data.starts, data.sizes))
    assert ev.loglik == pytest.approx(total, rel=1e-13)
