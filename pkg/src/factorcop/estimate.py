"""Maximum likelihood fitting, standard errors and model selection."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .likelihood import DEFAULT_NODES, evaluate
from .margins import LOG_SD_FLOOR
from .model import ClusteredDataset, ModelSpec, ParamVector, QuadratureRule

DEFAULT_START_TAU = 0.5


@dataclass
class FitOptions:
    """Optimizer settings; ``tol_grad=None`` means ``1e-5 * sqrt(N)``."""

    max_iter: int = 500
    tol_grad: float | None = None
    step_tol: float = 1e-8
    start_tau: float = DEFAULT_START_TAU
    quad_nodes: int = DEFAULT_NODES

    def rule(self) -> QuadratureRule:
        return QuadratureRule.gauss_legendre(self.quad_nodes)


@dataclass
class CovarianceResult:
    sigma_hat: np.ndarray       # OPG matrix (1/N) sum_k s_k s_k'
    cov: np.ndarray             # estimated covariance of theta_hat
    se: np.ndarray              # NaN where unavailable
    singular: bool


@dataclass
class FitResult:
    spec: ModelSpec
    params: ParamVector
    se: np.ndarray
    cov: np.ndarray
    loglik: float
    grad_norm: float
    converged: bool
    iterations: int
    lambda_k: float
    nan_encountered: bool
    n_obs: int
    n_clusters: int
    quad_nodes: int
    start: np.ndarray
    start_loglik: float
    se_available: bool = True
    message: str = ""
    neg_inf_clusters: list = field(default_factory=list)
    free: np.ndarray | None = None   # mask of estimated entries; None means all

    @property
    def n_params(self) -> int:
        """Number of estimated parameters (held-fixed entries do not count)."""
        return self.spec.n_params if self.free is None else int(np.sum(self.free))

    @property
    def aic(self) -> float:
        return -2.0 * self.loglik + 2.0 * self.n_params

    @property
    def bic(self) -> float:
        return -2.0 * self.loglik + math.log(self.n_obs) * self.n_params

    def criterion(self, name: str) -> float:
        name = name.lower()
        if name not in ("aic", "bic"):
            raise ValueError(f"unknown criterion {name!r}; expected aic or bic")
        return self.aic if name == "aic" else self.bic

    @property
    def theta(self) -> np.ndarray:
        return self.params.values

    def _free_mask(self):
        return np.ones(self.spec.n_params, bool) if self.free is None else self.free

    def to_dict(self) -> dict:
        se = [None if not np.isfinite(s) else float(s) for s in self.se]
        return {
            "model": self.spec.describe(),
            "parameters": [{"name": n, "estimate": float(v), "se": s, "fixed": not f}
                           for n, v, s, f in zip(self.params.names, self.params.values, se,
                                                 self._free_mask())],
            "loglik": float(self.loglik),
            "aic": float(self.aic),
            "bic": float(self.bic),
            "n_params": int(self.n_params),
            "grad_norm": float(self.grad_norm),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "lambda_k": float(self.lambda_k),
            "nan_encountered": bool(self.nan_encountered),
            "se_available": bool(self.se_available),
            "n_obs": int(self.n_obs),
            "n_clusters": int(self.n_clusters),
            "quad_nodes": int(self.quad_nodes),
            "message": self.message,
        }


# Starting values ---------------------------------------------------------------

def _irls(x, y, family, tol=1e-8, max_iter=100):
    """Independent-observation GLM fit by iteratively reweighted least squares."""
    coef = np.zeros(x.shape[1])
    for _ in range(max_iter):
        eta = x @ coef
        if family == "poisson":
            mu = np.exp(eta)
            w = mu
        else:
            mu = special.expit(eta)
            w = mu * (1 - mu)
        if not np.all(np.isfinite(mu)) or np.any(w <= 0):
            return None
        z = eta + (y - mu) / w
        sw = np.sqrt(w)
        new, *_ = np.linalg.lstsq(x * sw[:, None], z * sw, rcond=None)
        if not np.all(np.isfinite(new)):
            return None
        if np.max(np.abs(new - coef)) < tol * (1 + np.max(np.abs(coef))):
            return new
        coef = new
    return None


def auto_start(spec: ModelSpec, data: ClusteredDataset,
               start_tau: float = DEFAULT_START_TAU) -> ParamVector:
    """Independence GLM fit for the margin; copula intercept at ``start_tau``."""
    if data.n_obs == 0:
        raise ValueError("no data rows")
    x = np.column_stack([np.ones(data.n_obs), data.design(spec.margin_covariates)])
    y = data.y
    name = spec.margin.name
    if name == "gaussian":
        coef, *_ = np.linalg.lstsq(x, y, rcond=None)
        resid = y - x @ coef
        sd = math.sqrt(float(np.mean(resid**2)))
        margin = list(coef) + [max(math.log(sd) if sd > 0 else -np.inf, LOG_SD_FLOOR)]
    else:
        coef = _irls(x, y, name)
        if coef is None:
            # fall back to an intercept matching the sample mean
            m = float(np.mean(y))
            if name == "poisson":
                icpt = math.log(max(m, 1e-8))
            else:
                icpt = float(special.logit(min(max(m, 1e-8), 1 - 1e-8)))
            coef = np.zeros(x.shape[1])
            coef[0] = icpt
        margin = list(coef)
    cop = spec.copula
    s0 = float(cop.predictor_from_param(cop.tau_to_param(start_tau)))
    copula = [s0] + [0.0] * len(spec.copula_covariates)
    return ParamVector(np.array(margin + copula, dtype=float), spec)


# Optimizer ---------------------------------------------------------------------

class _Objective:
    """Negative mean log-likelihood with failure-safe evaluation."""

    def __init__(self, spec, data, rule, base, free):
        self.spec, self.data, self.rule = spec, data, rule
        self.base = np.asarray(base, dtype=float)
        self.free = free
        self.n = data.n_obs
        self.nan_seen = False

    def full(self, x):
        theta = self.base.copy()
        theta[self.free] = x
        return theta

    def __call__(self, x):
        theta = self.full(x)
        try:
            with np.errstate(all="ignore"):
                ev = evaluate(self.spec, theta, self.data, self.rule, grad=True)
        except (ValueError, ArithmeticError, FloatingPointError):
            self.nan_seen = True
            return np.inf, None, None
        g = ev.score
        if ev.nan_encountered or not np.all(np.isfinite(g)) or np.isnan(ev.loglik):
            self.nan_seen = True
            return np.inf, None, None
        if not np.isfinite(ev.loglik):
            return np.inf, None, None
        g = g[self.free]
        return -ev.loglik / self.n, -g / self.n, ev


def _bfgs(obj: _Objective, x0, tol_grad, max_iter, step_tol):
    """Quasi-Newton descent with Armijo backtracking.

    Returns ``(x, f, g, converged, iterations, message)`` for the last accepted
    iterate, which is also the best one since every accepted step decreases
    the objective.  The inverse Hessian approximation is rescaled after the
    first accepted step and the update is skipped whenever the curvature
    condition fails.
    """
    x = np.array(x0, dtype=float)
    f, g, _ = obj(x)
    if not np.isfinite(f):
        return x, f, g, False, 0, "objective undefined at the starting value"
    n = obj.n
    h_inv = np.eye(x.size)
    scaled = False
    for it in range(1, max_iter + 1):
        if np.max(np.abs(g)) * n < tol_grad:
            return x, f, g, True, it - 1, "gradient tolerance reached"
        d = -h_inv @ g
        if not d @ g < 0:
            h_inv = np.eye(x.size)
            d = -g
        # cap the first trial step so early iterations stay in a sane region
        norm = np.max(np.abs(d))
        step = 1.0 if norm <= 2.0 else 2.0 / norm
        slope = d @ g
        accepted = False
        for _ in range(60):
            xn = x + step * d
            fn, gn, _ = obj(xn)
            if np.isfinite(fn) and fn <= f + 1e-4 * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            return x, f, g, np.max(np.abs(g)) * n < tol_grad, it, "line search failed"
        s = xn - x
        yv = gn - g
        rel = np.max(np.abs(s) / (1.0 + np.abs(x)))
        x, f, g = xn, fn, gn
        sy = s @ yv
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(yv):
            if not scaled:
                h_inv = np.eye(x.size) * (sy / (yv @ yv))
                scaled = True
            rho = 1.0 / sy
            a = np.eye(x.size) - rho * np.outer(s, yv)
            h_inv = a @ h_inv @ a.T + rho * np.outer(s, s)
        if rel < step_tol:
            ok = np.max(np.abs(g)) * n < tol_grad
            return x, f, g, ok, it, "gradient tolerance reached" if ok else "step tolerance reached"
    ok = np.max(np.abs(g)) * n < tol_grad
    return x, f, g, ok, max_iter, "gradient tolerance reached" if ok else "maximum iterations reached"


# Covariance ----------------------------------------------------------------------

def covariance(spec: ModelSpec, theta, data: ClusteredDataset,
               rule: QuadratureRule | None = None) -> CovarianceResult:
    """Outer-product-of-scores covariance; ``se_j = sqrt((Sigma^-1)_jj / N)``."""
    ev = evaluate(spec, theta, data, rule, grad=True)
    return _covariance_from_scores(ev.cluster_scores, data.n_obs)


def _covariance_from_scores(scores, n_obs) -> CovarianceResult:
    p = scores.shape[1]
    sigma = scores.T @ scores / n_obs
    sigma = 0.5 * (sigma + sigma.T)
    eig = np.linalg.eigvalsh(sigma)
    top = max(float(eig[-1]), 0.0)
    singular = (scores.shape[0] < p or top == 0.0
                or float(eig[0]) <= 1e-12 * top or not np.all(np.isfinite(eig)))
    if singular:
        warnings.warn("score outer-product matrix is singular; standard errors unavailable",
                      RuntimeWarning, stacklevel=3)
        inv = np.linalg.pinv(sigma)
        se = np.full(p, np.nan)
    else:
        inv = np.linalg.inv(sigma)
        se = np.sqrt(np.maximum(np.diag(inv), 0.0) / n_obs)
    return CovarianceResult(sigma, inv / n_obs, se, singular)


# Fitting ---------------------------------------------------------------------------

def fit(spec: ModelSpec, data: ClusteredDataset, rule: QuadratureRule | None = None,
        start: ParamVector | np.ndarray | None = None,
        options: FitOptions | None = None, fixed: dict | None = None) -> FitResult:
    """Maximize the log-likelihood; never raises on non-convergence.

    ``fixed`` maps parameter names to values held constant during the fit;
    such entries get no standard error and do not count in AIC/BIC.
    """
    options = options or FitOptions()
    rule = rule or options.rule()
    if start is None:
        start_vec = auto_start(spec, data, options.start_tau).values
    else:
        start_vec = ParamVector(getattr(start, "values", start), spec).values
    names = spec.param_names()
    free = np.ones(spec.n_params, bool)
    start_vec = np.array(start_vec, dtype=float)
    for name, value in (fixed or {}).items():
        if name not in names:
            raise ValueError(f"cannot fix unknown parameter {name!r}")
        free[names.index(name)] = False
        start_vec[names.index(name)] = float(value)
    tol_grad = options.tol_grad if options.tol_grad is not None else 1e-5 * math.sqrt(data.n_obs)
    obj = _Objective(spec, data, rule, start_vec, free)
    f0, _, _ = obj(start_vec[free])
    start_ll = -f0 * data.n_obs if np.isfinite(f0) else -np.inf
    xf, f, g, converged, iters, message = _bfgs(obj, start_vec[free], tol_grad,
                                                options.max_iter, options.step_tol)
    x = obj.full(xf)
    if np.isfinite(f):
        best_ll = -f * data.n_obs
        grad_norm = float(np.max(np.abs(g))) * data.n_obs
    else:
        best_ll, grad_norm = -np.inf, float("inf")
        try:
            with np.errstate(all="ignore"):
                dead = [int(k) for k in evaluate(spec, x, data, rule, grad=False).neg_inf_clusters]
        except (ValueError, ArithmeticError):
            dead = []
    converged = bool(converged and grad_norm < tol_grad)

    se = np.full(spec.n_params, np.nan)
    cov = np.full((spec.n_params, spec.n_params), np.nan)
    se_ok = False
    if np.isfinite(best_ll):
        ev = evaluate(spec, x, data, rule, grad=True)
        best_ll = ev.loglik
        dead = [int(k) for k in ev.neg_inf_clusters]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            cres = _covariance_from_scores(ev.cluster_scores[:, free], data.n_obs)
        se_ok = not cres.singular
        cov[np.ix_(free, free)] = cres.cov
        if se_ok:
            se[free] = cres.se
    return FitResult(spec=spec, params=ParamVector(x, spec), se=se, cov=cov,
                     loglik=float(best_ll), grad_norm=grad_norm, converged=converged,
                     iterations=int(iters), lambda_k=data.lambda_k,
                     nan_encountered=bool(obj.nan_seen), n_obs=data.n_obs,
                     n_clusters=data.n_clusters, quad_nodes=rule.size,
                     start=np.asarray(start_vec), start_loglik=float(start_ll),
                     se_available=se_ok, message=message, neg_inf_clusters=dead,
                     free=None if free.all() else free)


INDEPENDENCE = "independence"


def independence_fixed(spec: ModelSpec) -> dict:
    """Fixed values that turn ``spec`` into the independence-copula model.

    Only the Gaussian copula is used for this: its predictor 0 gives rho = 0,
    so ``c = 1`` exactly.
    """
    if spec.copula.name != "gaussian":
        raise ValueError("the independence baseline is built on the Gaussian copula")
    return {n: 0.0 for n in spec.param_names() if n.startswith("copula:")}


def fit_independence(spec: ModelSpec, data: ClusteredDataset, rule=None,
                     options: FitOptions | None = None) -> FitResult:
    """Margin-only fit with no within-cluster dependence (the GLM baseline)."""
    base = ModelSpec.make("gaussian", spec.margin, spec.margin_covariates,
                          spec.copula_covariates)
    return fit(base, data, rule, options=options, fixed=independence_fixed(base))


# Selection --------------------------------------------------------------------------

@dataclass
class Candidate:
    spec: ModelSpec
    order: int
    result: FitResult | None
    value: float
    error: str = ""

    @property
    def flagged(self) -> bool:
        return self.result is None or not self.result.converged


def select(specs, data: ClusteredDataset, rule: QuadratureRule | None = None,
           criterion: str = "bic", options: FitOptions | None = None) -> list[Candidate]:
    """Fit every candidate and rank by the information criterion (smallest first).

    Ties are broken by fewer parameters, then by position in ``specs``.
    Candidates that fail outright rank last with an infinite criterion.
    """
    specs = list(specs)
    if len(specs) < 2:
        raise ValueError("model selection needs at least two candidate specifications")
    criterion = criterion.lower()
    if criterion not in ("aic", "bic"):
        raise ValueError(f"unknown criterion {criterion!r}; expected aic or bic")
    out = []
    for i, sp in enumerate(specs):
        try:
            res = fit(sp, data, rule, options=options)
            val = res.criterion(criterion)
            if not np.isfinite(val):
                val = np.inf
            out.append(Candidate(sp, i, res, val))
        except (ValueError, ArithmeticError) as exc:
            out.append(Candidate(sp, i, None, np.inf, str(exc)))
    out.sort(key=lambda c: (c.value, c.spec.n_params, c.order))
    return out
