"""Parametric margins ``G_a`` with their covariate links.

Each family maps a linear predictor ``eta = alpha' [1, x]`` (and, for the
Gaussian margin, a log standard deviation) to its natural parameters and
provides cdf, left-limit cdf, density or pmf, left-inverse quantile and the
derivatives the score needs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special, stats

MARGIN_NAMES = ("gaussian", "poisson", "bernoulli")

#: Lower bound on log standard deviation of Gaussian margins.
LOG_SD_FLOOR = float(np.log(1e-6))


class MarginDomainError(ValueError):
    """Raised for invalid margin parameters or arguments."""


class MarginFamily:
    name = "margin"
    reference = "lebesgue"
    n_dispersion = 0

    @property
    def discrete(self):
        return self.reference == "counting"

    def natural(self, eta, disp=None):
        """Natural parameters from the linear predictor (and dispersion)."""
        raise NotImplementedError

    def check(self, param):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}()"

    def __eq__(self, other):
        return type(self) is type(other)

    def __hash__(self):
        return hash(type(self).__name__)


class GaussianMargin(MarginFamily):
    """Normal margin; ``param = (mean, sd)``."""

    name = "gaussian"
    reference = "lebesgue"
    n_dispersion = 1

    def natural(self, eta, disp=None):
        if disp is None:
            raise MarginDomainError("Gaussian margin needs a log-sd dispersion value")
        return (np.asarray(eta, dtype=float), np.exp(np.maximum(disp, LOG_SD_FLOOR)))

    def check(self, param):
        mu, sd = (np.asarray(p, dtype=float) for p in param)
        if np.any(~np.isfinite(mu)) or np.any(~(sd > 0)) or np.any(~np.isfinite(sd)):
            raise MarginDomainError("Gaussian margin needs finite mean and sd > 0")
        return mu, sd

    def cdf(self, param, y):
        mu, sd = self.check(param)
        return special.ndtr((np.asarray(y, dtype=float) - mu) / sd)

    def cdf_left(self, param, y):
        return self.cdf(param, y)

    def pdf(self, param, y):
        return np.exp(self.logpdf(param, y))

    def logpdf(self, param, y):
        mu, sd = self.check(param)
        z = (np.asarray(y, dtype=float) - mu) / sd
        return -0.5 * np.log(2 * np.pi) - np.log(sd) - 0.5 * z**2

    def quantile(self, param, u):
        mu, sd = self.check(param)
        u = _check_unit(u)
        return mu + sd * special.ndtri(u)

    def mean(self, param):
        return self.check(param)[0] * 1.0

    # derivatives w.r.t. (eta, log sd)
    def dlogpdf(self, param, y):
        mu, sd = self.check(param)
        z = (np.asarray(y, dtype=float) - mu) / sd
        return z / sd, z**2 - 1

    def dcdf(self, param, y):
        mu, sd = self.check(param)
        z = (np.asarray(y, dtype=float) - mu) / sd
        phi = np.exp(-0.5 * z**2) / np.sqrt(2 * np.pi)
        return -phi / sd, -phi * z


class PoissonMargin(MarginFamily):
    """Poisson margin with log link; ``param = (rate,)``."""

    name = "poisson"
    reference = "counting"

    def natural(self, eta, disp=None):
        return (np.exp(np.asarray(eta, dtype=float)),)

    def check(self, param):
        (rate,) = param
        rate = np.asarray(rate, dtype=float)
        if np.any(~(rate > 0)) or np.any(~np.isfinite(rate)):
            raise MarginDomainError("Poisson margin needs a finite rate > 0")
        return rate

    def cdf(self, param, y):
        rate = self.check(param)
        y = np.floor(np.asarray(y, dtype=float))
        return np.where(y < 0, 0.0, stats.poisson.cdf(y, rate))

    def cdf_left(self, param, y):
        return self.cdf(param, np.ceil(np.asarray(y, dtype=float)) - 1)

    def pdf(self, param, y):
        rate = self.check(param)
        return stats.poisson.pmf(np.asarray(y), rate)

    def logpdf(self, param, y):
        rate = self.check(param)
        return stats.poisson.logpmf(np.asarray(y), rate)

    def quantile(self, param, u):
        rate = self.check(param)
        u = _check_unit(u)
        y = stats.poisson.ppf(u, rate)
        # guard the left-inverse property against rounding in the cdf
        y = np.where((y > 0) & (stats.poisson.cdf(y - 1, rate) >= u), y - 1, y)
        y = np.where(stats.poisson.cdf(y, rate) < u, y + 1, y)
        return y

    def mean(self, param):
        return self.check(param) * 1.0

    def dcdf(self, param, y):
        # d/d eta P(Y <= y) = -rate * pmf(y)
        rate = self.check(param)
        y = np.floor(np.asarray(y, dtype=float))
        return np.where(y < 0, 0.0, -rate * stats.poisson.pmf(y, rate))

    def dcdf_left(self, param, y):
        return self.dcdf(param, np.ceil(np.asarray(y, dtype=float)) - 1)

    def support_max(self, param, tail=1e-12):
        """Smallest y with cdf(y) >= 1 - tail."""
        rate = self.check(param)
        return stats.poisson.isf(tail, rate)


class BernoulliMargin(MarginFamily):
    """Bernoulli margin with logit link; ``param = (p,)``."""

    name = "bernoulli"
    reference = "counting"

    def natural(self, eta, disp=None):
        return (special.expit(np.asarray(eta, dtype=float)),)

    def check(self, param):
        (p,) = param
        p = np.asarray(p, dtype=float)
        if np.any(~(p > 0)) or np.any(~(p < 1)):
            raise MarginDomainError("Bernoulli margin needs p in (0, 1)")
        return p

    def cdf(self, param, y):
        p = self.check(param)
        y = np.asarray(y, dtype=float)
        return np.where(y < 0, 0.0, np.where(y < 1, 1.0 - p, 1.0))

    def cdf_left(self, param, y):
        return self.cdf(param, np.ceil(np.asarray(y, dtype=float)) - 1)

    def pdf(self, param, y):
        p = self.check(param)
        y = np.asarray(y, dtype=float)
        return np.where(y == 1, p, np.where(y == 0, 1 - p, 0.0))

    def logpdf(self, param, y):
        with np.errstate(divide="ignore"):
            return np.log(self.pdf(param, y))

    def quantile(self, param, u):
        p = self.check(param)
        u = _check_unit(u)
        return np.where(u <= 1 - p, 0.0, 1.0)

    def mean(self, param):
        return self.check(param) * 1.0

    def dcdf(self, param, y):
        p = self.check(param)
        y = np.asarray(y, dtype=float)
        return np.where((y >= 0) & (y < 1), -p * (1 - p), 0.0)

    def dcdf_left(self, param, y):
        return self.dcdf(param, np.ceil(np.asarray(y, dtype=float)) - 1)

    def support_max(self, param, tail=1e-12):
        return np.ones_like(self.check(param))


def _check_unit(u):
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u >= 1)):
        raise MarginDomainError("quantile level must lie in (0, 1)")
    return u


_REGISTRY = {"gaussian": GaussianMargin, "poisson": PoissonMargin,
             "bernoulli": BernoulliMargin}


def get_margin(name) -> MarginFamily:
    if isinstance(name, MarginFamily):
        return name
    key = str(name).strip().lower()
    if key not in _REGISTRY:
        raise MarginDomainError(
            f"unknown margin {name!r}; expected one of {', '.join(MARGIN_NAMES)}")
    return _REGISTRY[key]()


@dataclass
class MarginLink:
    """Margin coefficients ``alpha`` (intercept first) and optional log-sd."""

    family: MarginFamily
    coef: np.ndarray
    dispersion: float | None = None

    def __post_init__(self):
        self.family = get_margin(self.family)
        self.coef = np.atleast_1d(np.asarray(self.coef, dtype=float))
        if self.family.n_dispersion and self.dispersion is None:
            raise MarginDomainError("Gaussian margin link needs a dispersion (log sd)")
        if not self.family.n_dispersion and self.dispersion is not None:
            raise MarginDomainError(f"{self.family.name} margin takes no dispersion")


def linear_predictor(coef, x):
    """``coef' [1, x]`` row-wise; ``x`` is (n, p) or (p,) without the intercept."""
    coef = np.atleast_1d(np.asarray(coef, dtype=float))
    x = np.asarray(x, dtype=float)
    if x.ndim <= 1:
        x = x.reshape(1, -1) if x.size else np.zeros((1, 0))
        squeeze = True
    else:
        squeeze = False
    if x.shape[1] + 1 != coef.size:
        raise MarginDomainError(
            f"covariate dimension {x.shape[1]} does not match {coef.size - 1} slope coefficients")
    eta = coef[0] + x @ coef[1:]
    return eta[0] if squeeze else eta


def param_at(link: MarginLink, x):
    """Natural margin parameters at covariate vector(s) ``x``."""
    eta = linear_predictor(link.coef, x)
    return link.family.natural(eta, link.dispersion)
