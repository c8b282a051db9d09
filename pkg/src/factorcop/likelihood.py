"""Cluster likelihood of the factor copula model and its score.

For cluster ``k`` with observations ``y_k1..y_kn`` the likelihood integrates
the latent factor out,

    f_k = int_0^1 prod_i f_ki(y_ki, v) dv,

where ``f = g(y) c(G(y), v)`` for continuous margins and
``f = h(G(y), v) - h(G(y-), v)`` for counting margins.  The integral is a
Gauss-Legendre sum on (0, 1) evaluated in log space with the per-cluster
maximum subtracted, so long clusters do not underflow.  A cluster with one
observation needs no quadrature: its likelihood is the marginal density.

The score uses the chain rule through closed-form copula and margin
derivatives: with posterior node weights ``pi_kq = w_q prod_i f_kiq / f_k``
the cluster score is ``sum_q pi_kq sum_i d log f_kiq / d theta``.

Reduction order: observations are summed within a cluster in stored row
order (``np.add.reduceat``), then clusters are summed in index order, so
results are bit-stable for a given dataset and rule.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .copulas import CopulaDomainError
from .margins import LOG_SD_FLOOR, MarginDomainError
from .model import ClusteredDataset, ModelSpec, QuadratureRule

DEFAULT_NODES = 64


class LikelihoodError(ValueError):
    """Parameter values that make the likelihood undefined at some observation."""


@dataclass
class LikelihoodEval:
    """Everything computed in one pass over the data."""

    loglik: float
    cluster_loglik: np.ndarray          # (K,)
    log_post: np.ndarray                # (K, Q) log posterior node weights
    cluster_scores: np.ndarray | None   # (K, P)
    neg_inf_clusters: np.ndarray        # indices of clusters with -inf likelihood
    nan_encountered: bool

    @property
    def score(self) -> np.ndarray:
        return self.cluster_scores.sum(axis=0)


def _design(x, n):
    if x is None:
        return np.zeros((n, 0))
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(n, -1) if x.size else np.zeros((n, 0))
    return x


def _with_intercept(x):
    return np.column_stack([np.ones(x.shape[0]), x])


def _locate(exc, bad_rows, what):
    idx = np.flatnonzero(bad_rows)
    where = f" at observation {int(idx[0])}" if idx.size else ""
    return LikelihoodError(f"{what}{where}: {exc}")


def node_terms(spec: ModelSpec, theta, y, xm, xc, v, grad=True):
    """Per-observation log densities on the nodes ``v`` and their derivatives.

    Returns ``logf`` of shape (N, Q) and, when ``grad`` is true, a tuple
    ``(d_eta, d_logsd, d_s)`` of (N, Q) arrays holding the derivatives of
    ``log f`` with respect to the margin linear predictor, the log-sd (or
    ``None``) and the copula linear predictor.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    xm, xc = _design(xm, n), _design(xc, n)
    alpha, log_sd, beta = spec.split(theta)
    if xm.shape[1] + 1 != alpha.size or xc.shape[1] + 1 != beta.size:
        raise LikelihoodError("design columns do not match the parameter layout")
    cop, mar = spec.copula, spec.margin
    eta = alpha[0] + xm @ alpha[1:]
    s = beta[0] + xc @ beta[1:]
    v = np.asarray(v, dtype=float)[None, :]

    mparam = mar.natural(eta, log_sd)
    try:
        mar.check(mparam)
    except MarginDomainError as exc:
        bad = ~np.isfinite(eta) | ~np.isfinite(mparam[0])
        if mar.name == "bernoulli":
            bad |= (mparam[0] <= 0) | (mparam[0] >= 1)
        raise _locate(exc, bad, "margin parameter out of range") from exc
    with np.errstate(over="ignore"):
        cparam = cop.param_from_predictor(s)
    try:
        cop.check_param(cparam)
    except CopulaDomainError as exc:
        lo, hi = cop.param_bounds
        bad = ~np.isfinite(cparam) | (cparam < lo) | (cparam > hi)
        raise _locate(exc, bad, "copula parameter out of range") from exc
    cp = cparam[:, None]

    if not mar.discrete:
        u = mar.cdf(mparam, y)[:, None]
        logf = mar.logpdf(mparam, y)[:, None] + cop.logpdf(cp, u, v)
        if not grad:
            return logf, None
        dlg_eta, dlg_lsd = mar.dlogpdf(mparam, y)
        dg_eta, dg_lsd = mar.dcdf(mparam, y)
        dlc_du = cop.dlogpdf_du(cp, u, v)
        d_eta = dlg_eta[:, None] + dlc_du * dg_eta[:, None]
        d_lsd = dlg_lsd[:, None] + dlc_du * dg_lsd[:, None]
        if log_sd < LOG_SD_FLOOR:
            d_lsd = np.zeros_like(d_lsd)
        d_s = cop.dlogpdf_dparam(cp, u, v) * cop.dparam_dpredictor(s)[:, None]
        return logf, (d_eta, d_lsd, d_s)

    u1 = mar.cdf(mparam, y)[:, None]
    u0 = mar.cdf_left(mparam, y)[:, None]
    h1 = cop.hfunc(cp, u1, v)
    h0 = cop.hfunc(cp, u0, v)
    f = h1 - h0
    with np.errstate(divide="ignore"):
        logf = np.where(f > 0, np.log(np.where(f > 0, f, 1.0)), -np.inf)
    if not grad:
        return logf, None
    inner1 = (u1 > 0) & (u1 < 1)
    inner0 = (u0 > 0) & (u0 < 1)
    c1 = np.where(inner1, cop.pdf(cp, u1, v), 0.0)
    c0 = np.where(inner0, cop.pdf(cp, u0, v), 0.0)
    df_eta = (c1 * mar.dcdf(mparam, y)[:, None] - c0 * mar.dcdf_left(mparam, y)[:, None])
    dh1 = np.where(inner1, cop.dhfunc_dparam(cp, u1, v), 0.0)
    dh0 = np.where(inner0, cop.dhfunc_dparam(cp, u0, v), 0.0)
    df_s = (dh1 - dh0) * cop.dparam_dpredictor(s)[:, None]
    safe = np.where(f > 0, f, 1.0)
    d_eta = np.where(f > 0, df_eta / safe, 0.0)
    d_s = np.where(f > 0, df_s / safe, 0.0)
    return logf, (d_eta, None, d_s)


def margin_terms(spec: ModelSpec, theta, y, xm):
    """Marginal log density (or log pmf) per observation and its margin derivatives.

    This is the exact value of the latent integral for a cluster of one
    observation, since the copula density integrates to one in ``v``.
    Returns ``logf`` of shape (N,) and ``(d_eta, d_logsd)``.
    """
    y = np.asarray(y, dtype=float)
    xm = _design(xm, y.size)
    alpha, log_sd, _ = spec.split(theta)
    mar = spec.margin
    mparam = mar.natural(alpha[0] + xm @ alpha[1:], log_sd)
    if not mar.discrete:
        d_eta, d_lsd = mar.dlogpdf(mparam, y)
        if log_sd < LOG_SD_FLOOR:
            d_lsd = np.zeros_like(d_lsd)
        return mar.logpdf(mparam, y), (d_eta, d_lsd)
    f = mar.cdf(mparam, y) - mar.cdf_left(mparam, y)
    safe = np.where(f > 0, f, 1.0)
    with np.errstate(divide="ignore"):
        logf = np.where(f > 0, np.log(safe), -np.inf)
    d_eta = np.where(f > 0, (mar.dcdf(mparam, y) - mar.dcdf_left(mparam, y)) / safe, 0.0)
    return logf, (d_eta, None)


def evaluate(spec: ModelSpec, theta, data: ClusteredDataset,
             rule: QuadratureRule | None = None, grad: bool = True) -> LikelihoodEval:
    """Log-likelihood, posterior node weights and (optionally) per-cluster scores."""
    rule = rule or QuadratureRule.gauss_legendre(DEFAULT_NODES)
    theta = np.asarray(theta, dtype=float)
    xm = data.design(spec.margin_covariates)
    xc = data.design(spec.copula_covariates)
    logf, ders = node_terms(spec, theta, data.y, xm, xc, rule.nodes, grad=grad)
    starts = data.starts
    nan_seen = bool(np.isnan(logf).any())
    logf = np.where(np.isnan(logf), -np.inf, logf)

    node_ll = np.add.reduceat(logf, starts, axis=0)               # (K, Q)
    with np.errstate(divide="ignore"):
        lw = node_ll + np.log(rule.weights)[None, :]
    ll_k = logsumexp(lw, axis=1)                                   # max-shifted internally
    single = np.flatnonzero(data.sizes == 1)
    if single.size:
        rows = starts[single]
        s_logf, s_ders = margin_terms(spec, theta, data.y[rows], xm[rows])
        # singleton node posteriors keep their quadrature normalization; if every
        # node underflowed the posterior falls back to the prior weights
        quad = ll_k[single]
        ok = np.isfinite(quad)
        with np.errstate(divide="ignore", invalid="ignore"):
            lw[single[~ok]] = np.log(rule.weights)[None, :]
            lw[single] += np.where(ok, s_logf - quad, s_logf)[:, None]
        ll_k[single] = s_logf
    dead = ~np.isfinite(ll_k)
    with np.errstate(invalid="ignore"):
        log_post = np.where(dead[:, None], np.log(rule.weights)[None, :],
                            lw - np.where(dead, 0.0, ll_k)[:, None])
    total = float(np.sum(ll_k))

    scores = None
    if grad:
        post = np.exp(log_post)
        post[dead] = 0.0
        per_row = post[data.cluster]                               # (N, Q)
        d_eta, d_lsd, d_s = ders
        cols = [np.sum(per_row * d_eta, axis=1)[:, None] * _with_intercept(xm)]
        if spec.n_dispersion:
            cols.append(np.sum(per_row * d_lsd, axis=1)[:, None])
        cols.append(np.sum(per_row * d_s, axis=1)[:, None] * _with_intercept(xc))
        contrib = np.column_stack(cols)
        if np.isnan(contrib).any():
            nan_seen = True
        scores = np.add.reduceat(contrib, starts, axis=0)
        if single.size:
            cols = [s_ders[0][:, None] * _with_intercept(xm[rows])]
            if spec.n_dispersion:
                cols.append(s_ders[1][:, None])
            cols.append(np.zeros((single.size, spec.n_copula_coef)))
            scores[single] = np.column_stack(cols)
    return LikelihoodEval(total, ll_k, log_post, scores, np.flatnonzero(dead), nan_seen)


# Public operations -------------------------------------------------------------

def obs_density(spec: ModelSpec, theta, y, x_margin=None, x_copula=None, v=0.5):
    """Density (or pmf) of single observations given the latent value(s) ``v``.

    ``y`` has shape (N,); the result has shape (N, len(v)), squeezed to (N,)
    for scalar ``v``.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    v_arr = np.atleast_1d(np.asarray(v, dtype=float))
    if np.any((v_arr <= 0) | (v_arr >= 1)):
        raise LikelihoodError("latent value v must lie in (0, 1)")
    logf, _ = node_terms(spec, theta, y, x_margin, x_copula, v_arr, grad=False)
    out = np.exp(logf)
    return out[:, 0] if np.ndim(v) == 0 else out


def cluster_loglik(spec: ModelSpec, theta, y, x_margin=None, x_copula=None,
                   rule: QuadratureRule | None = None) -> float:
    """Log-likelihood of a single cluster; ``-inf`` if every node underflows."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    rule = rule or QuadratureRule.gauss_legendre(DEFAULT_NODES)
    logf, _ = node_terms(spec, theta, y, x_margin, x_copula, rule.nodes, grad=False)
    if y.size == 1:
        return float(margin_terms(spec, theta, y, x_margin)[0][0])
    logf = np.where(np.isnan(logf), -np.inf, logf)
    with np.errstate(divide="ignore"):
        return float(logsumexp(logf.sum(axis=0) + np.log(rule.weights)))


def total_loglik(spec: ModelSpec, theta, data: ClusteredDataset,
                 rule: QuadratureRule | None = None) -> float:
    return evaluate(spec, theta, data, rule, grad=False).loglik


def score(spec: ModelSpec, theta, data: ClusteredDataset,
          rule: QuadratureRule | None = None) -> np.ndarray:
    return evaluate(spec, theta, data, rule, grad=True).score


def per_cluster_scores(spec: ModelSpec, theta, data: ClusteredDataset,
                       rule: QuadratureRule | None = None) -> np.ndarray:
    """K x P matrix of cluster score vectors; rows sum to :func:`score`."""
    return evaluate(spec, theta, data, rule, grad=True).cluster_scores


def fd_score(spec: ModelSpec, theta, data: ClusteredDataset,
             rule: QuadratureRule | None = None, step: float = 1e-4) -> np.ndarray:
    """Five-point central finite-difference gradient of :func:`total_loglik`.

    The fourth-order stencil allows a larger step, which keeps rounding noise
    in the discrete-margin likelihood from dominating the difference quotient.
    """
    theta = np.asarray(theta, dtype=float)
    out = np.empty_like(theta)

    def at(j, delta):
        t = theta.copy()
        t[j] += delta
        return total_loglik(spec, t, data, rule)

    for j in range(theta.size):
        h = step * (1.0 + abs(theta[j]))
        out[j] = (-at(j, 2 * h) + 8 * at(j, h) - 8 * at(j, -h) + at(j, -2 * h)) / (12 * h)
    return out
