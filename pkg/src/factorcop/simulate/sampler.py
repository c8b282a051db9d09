"""Draw responses from the factor copula model.

Per cluster the latent ``V_k ~ U(0, 1)`` is drawn first; each observation then
gets ``W ~ U(0, 1)``, ``U = h^{-1}(W | V_k)`` and ``Y = G^{-1}(U)`` with the
margin's left-inverse quantile.
"""
from __future__ import annotations

import numpy as np

from ..model import ClusteredDataset, ModelSpec


def _predictors(spec: ModelSpec, theta, xm, xc, n):
    alpha, log_sd, beta = spec.split(theta)
    xm = np.zeros((n, 0)) if xm is None else np.asarray(xm, dtype=float).reshape(n, -1)
    xc = np.zeros((n, 0)) if xc is None else np.asarray(xc, dtype=float).reshape(n, -1)
    eta = alpha[0] + xm @ alpha[1:]
    s = beta[0] + xc @ beta[1:]
    return spec.margin.natural(eta, log_sd), spec.copula.param_from_predictor(s)


def sample_uniforms(spec: ModelSpec, cparam, v, rng):
    """Copula-scale draws ``U`` given per-row latent values ``v``."""
    w = rng.uniform(size=np.shape(v))
    # keep w away from 0/1 so the quantile step is defined
    w = np.clip(w, 1e-15, 1 - 1e-15)
    u = spec.copula.hinv(cparam, w, v)
    return np.clip(u, 1e-15, 1 - 1e-15)


def sample_cluster(spec: ModelSpec, theta, x_margin=None, x_copula=None, rng=None,
                   n: int | None = None, v: float | None = None):
    """Responses of one cluster; returns ``(y, v, u)``.

    ``n`` defaults to the number of covariate rows; ``v`` is drawn when not given.
    """
    rng = rng if rng is not None else np.random.default_rng()
    if n is None:
        for x in (x_margin, x_copula):
            if x is not None:
                n = np.asarray(x).shape[0]
                break
    if n is None:
        raise ValueError("cluster size unknown: pass n or covariate rows")
    if v is None:
        v = rng.uniform()
    mparam, cparam = _predictors(spec, theta, x_margin, x_copula, n)
    u = sample_uniforms(spec, cparam, np.full(n, v), rng)
    y = spec.margin.quantile(mparam, u)
    return np.asarray(y, dtype=float), float(v), u


def sample_dataset(spec: ModelSpec, theta, sizes, covariates=None, rng=None,
                   v=None):
    """Whole dataset in one vectorized pass.

    ``sizes`` gives the cluster sizes; ``covariates`` maps names to arrays of
    length ``sum(sizes)``.  Returns ``(dataset, v)`` with the latent values used.
    """
    rng = rng if rng is not None else np.random.default_rng()
    sizes = np.asarray(sizes, dtype=int)
    n = int(sizes.sum())
    covariates = dict(covariates or {})
    cl = np.repeat(np.arange(sizes.size), sizes)
    if v is None:
        v = rng.uniform(size=sizes.size)
    v = np.asarray(v, dtype=float)
    xm = np.column_stack([covariates[c] for c in spec.margin_covariates]) \
        if spec.margin_covariates else None
    xc = np.column_stack([covariates[c] for c in spec.copula_covariates]) \
        if spec.copula_covariates else None
    mparam, cparam = _predictors(spec, theta, xm, xc, n)
    u = sample_uniforms(spec, cparam, v[cl], rng)
    y = np.asarray(spec.margin.quantile(mparam, u), dtype=float)
    return ClusteredDataset.from_arrays(y, cl, covariates), v
