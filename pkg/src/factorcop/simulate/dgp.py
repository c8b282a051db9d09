"""Catalog of data-generating processes used in the simulation studies.

``exp1``-``exp8`` are the parameter-recovery experiments (default 5 per
cluster), ``dgp1``-``dgp12`` the model-comparison designs (default 30 per
cluster).  Each draw returns the dataset, the generating model and its
parameter vector, and the covariate columns a fitted model should use.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import special

from ..model import ClusteredDataset, ModelSpec
from .sampler import sample_dataset
from .splines import SplineBasis

SPLINE_H3 = SplineBasis(1, (0.5,))


def s1(x):
    return 10 + 0.5 * x


def s2(x):
    return np.where(x < 0.5, 2 + x, 4 - 3 * x)


def s7(x):
    return -1.69 + 3 * x


def s8(x):
    return np.where(x <= 0.5, -2.7 + 10.6 * x, 4.6 - 4 * x)


@dataclass
class DgpDraw:
    """One generated dataset with its ground truth."""

    name: str
    data: ClusteredDataset
    spec: ModelSpec                 # generating model in copula form
    theta: np.ndarray               # true parameters of ``spec``
    v: np.ndarray                   # latent values used
    fit_margin_covariates: tuple
    fit_copula_covariates: tuple = ()
    extra: dict = field(default_factory=dict)

    def fit_spec(self, copula: str | None = None) -> ModelSpec:
        """Model with the recommended covariates and the given (or true) copula."""
        return ModelSpec.make(copula or self.spec.copula, self.spec.margin,
                              self.fit_margin_covariates, self.fit_copula_covariates)


@dataclass(frozen=True)
class DgpSpec:
    name: str
    description: str
    default_n: int
    build: Callable


def _covs_h1(x):
    return {"x": x}


def _covs_h3(x):
    b = SPLINE_H3(x)
    return {"x": x, "bs1": b[:, 0], "bs2": b[:, 1]}


def _draw(name, spec, theta, sizes, covs, rng, fit_m, fit_c=(), extra=None):
    data, v = sample_dataset(spec, theta, sizes, covs, rng)
    return DgpDraw(name, data, spec, np.asarray(theta, dtype=float), v,
                   tuple(fit_m), tuple(fit_c), extra or {})


# parameter-recovery experiments ---------------------------------------------------

def _exp1(K, n, rng):
    spec = ModelSpec.make("clayton", "gaussian")
    return _draw("exp1", spec, [10.0, 0.0, 0.0], [n] * K, {}, rng, ())


def _exp2(K, n, rng):
    u = rng.uniform(size=K * n)
    spec = ModelSpec.make("clayton", "gaussian", (), ("u",))
    return _draw("exp2", spec, [10.0, 0.0, 1.0, -1.5], [n] * K, {"u": u}, rng, (), ("u",))


def _exp3(K, n, rng):
    u = rng.uniform(size=K * n)
    z = rng.exponential(size=K * n)
    spec = ModelSpec.make("gumbel", "gaussian", ("z",), ("u",))
    return _draw("exp3", spec, [5.0, 5.0, 0.0, 1.0, -1.5], [n] * K,
                 {"z": z, "u": u}, rng, ("z",), ("u",))


def _exp45(margin, name):
    def build(K, n, rng):
        u = rng.uniform(size=K * n)
        z = rng.exponential(size=K * n)
        spec = ModelSpec.make("clayton", margin, ("z",), ("u",))
        return _draw(name, spec, [2.0, -3.0, 1.0, -1.5], [n] * K,
                     {"z": z, "u": u}, rng, ("z",), ("u",))
    return build


def _exp6(K, n, rng):
    N = K * n
    z1, u2 = rng.normal(size=N), rng.uniform(-1, 1, size=N)
    z3, u4 = rng.normal(size=N), rng.uniform(-1, 1, size=N)
    spec = ModelSpec.make("frank", "gaussian", ("z3", "u4"), ("z1", "u2"))
    covs = {"z1": z1, "u2": u2, "z3": z3, "u4": u4}
    return _draw("exp6", spec, [5.0, 5.0, 3.0, 0.0, 2.0, 8.0, 3.0], [n] * K, covs, rng,
                 ("z3", "u4"), ("z1", "u2"))


def _exp7(K, n, rng):
    N = K * n
    u1, u2 = rng.uniform(size=N), rng.uniform(-1, 1, size=N)
    u3, u4 = rng.uniform(size=N), rng.uniform(-1, 1, size=N)
    spec = ModelSpec.make("frank", "poisson", ("u3", "u4"), ("u1", "u2"))
    covs = {"u1": u1, "u2": u2, "u3": u3, "u4": u4}
    return _draw("exp7", spec, [3.0, -1.0, -0.5, 2.0, 8.0, 3.0], [n] * K, covs, rng,
                 ("u3", "u4"), ("u1", "u2"))


def _exp8(K, n, rng):
    N = K * n
    u1, u2 = rng.uniform(size=N), rng.uniform(-1, 1, size=N)
    u3, u4 = rng.uniform(size=N), rng.uniform(size=N)
    spec = ModelSpec.make("frank", "bernoulli", ("u3", "u4"), ("u1", "u2"))
    covs = {"u1": u1, "u2": u2, "u3": u3, "u4": u4}
    return _draw("exp8", spec, [1.5, -2.0, -0.5, 2.0, 8.0, 3.0], [n] * K, covs, rng,
                 ("u3", "u4"), ("u1", "u2"))


# model-comparison designs -----------------------------------------------------------

# s2 and s8 are piecewise linear with a kink at 0.5, so they are exactly
# b0 + b1*bs1 + b2*bs2 in the degree-1 basis with one knot at 0.5
S2_H3 = (2.0, 0.5, -1.0)
S8_H3 = (-2.7, 5.3, 3.3)


def _mixed(name, smooth, coef, h3):
    # random-intercept model; equals a Gaussian copula with rho = sd_eta / sd
    def build(K, n, rng):
        x = rng.uniform(size=K * n)
        covs = _covs_h3(x) if h3 else _covs_h1(x)
        cl = np.repeat(np.arange(K), n)
        eta = rng.normal(size=K)
        eps = rng.normal(scale=1.5, size=K * n)
        y = eta[cl] + smooth(x) + eps
        sd = math.sqrt(1 + 1.5**2)
        spec = ModelSpec.make("gaussian", "gaussian", ("bs1", "bs2") if h3 else ("x",))
        theta = list(coef) + [math.log(sd), math.atanh(1 / sd)]
        v = special.ndtr(eta)  # eta = sd_eta * Phi^{-1}(V) with sd_eta = 1
        data = ClusteredDataset.from_arrays(y, cl, covs)
        return DgpDraw(name, data, spec, np.array(theta), v, spec.margin_covariates,
                       (), {"sd_eta": 1.0, "sd_eps": 1.5})
    return build


def _copula_dgp(name, copula, margin, coef, log_sd, s, h3):
    def build(K, n, rng):
        x = rng.uniform(size=K * n)
        covs = _covs_h3(x) if h3 else _covs_h1(x)
        fit = ("bs1", "bs2") if h3 else ("x",)
        spec = ModelSpec.make(copula, margin, fit)
        theta = list(coef) + ([log_sd] if log_sd is not None else []) + [s]
        return _draw(name, spec, theta, [n] * K, covs, rng, fit)
    return build


def _many(name, copula, margin, tau, coef_hi, x_kind, sd_range=None):
    def build(K, n, rng):
        N = K * n
        names = tuple(f"x{j}" for j in range(1, 10))
        if x_kind == "uniform":
            xs = rng.uniform(size=(N, 9))
        else:
            xs = rng.normal(size=(N, 9))
        coef = rng.uniform(0, coef_hi, size=10)
        spec = ModelSpec.make(copula, margin, names)
        cop = spec.copula
        s = float(cop.predictor_from_param(cop.tau_to_param(tau)))
        theta = list(coef)
        if margin == "gaussian":
            sd = rng.uniform(*sd_range) if sd_range else 1.0
            theta.append(math.log(sd))
        theta.append(s)
        covs = {nm: xs[:, j] for j, nm in enumerate(names)}
        return _draw(name, spec, theta, [n] * K, covs, rng, names)
    return build


CATALOG = {
    "exp1": DgpSpec("exp1", "Clayton 2, N(10,1) margins", 5, _exp1),
    "exp2": DgpSpec("exp2", "Clayton 2exp(1-1.5U), N(10,1) margins", 5, _exp2),
    "exp3": DgpSpec("exp3", "Gumbel 1+exp(1-1.5U), N(5+5Z,1) margins, Z~Exp(1)", 5, _exp3),
    "exp4": DgpSpec("exp4", "Clayton 2exp(1-1.5U), Poisson exp(2-3Z)", 5, _exp45("poisson", "exp4")),
    "exp5": DgpSpec("exp5", "Clayton 2exp(1-1.5U), Bernoulli logit 2-3Z", 5,
                    _exp45("bernoulli", "exp5")),
    "exp6": DgpSpec("exp6", "Frank 2+8Z1+3U2, N(5+5Z3+3U4,1)", 5, _exp6),
    "exp7": DgpSpec("exp7", "Frank 2+8U1+3U2, Poisson exp(3-U3-0.5U4)", 5, _exp7),
    "exp8": DgpSpec("exp8", "Frank 2+8U1+3U2, Bernoulli logit 1.5-2U3-0.5U4", 5, _exp8),
    "dgp1": DgpSpec("dgp1", "random intercept N(0,1) + s1(X) + N(0,1.5^2)", 30,
                    _mixed("dgp1", s1, (10.0, 0.5), False)),
    "dgp2": DgpSpec("dgp2", "random intercept N(0,1) + s2(X) + N(0,1.5^2)", 30,
                    _mixed("dgp2", s2, S2_H3, True)),
    "dgp3": DgpSpec("dgp3", "Gumbel 2, N(s1(X),1.5^2)", 30,
                    _copula_dgp("dgp3", "gumbel", "gaussian", (10.0, 0.5), math.log(1.5), 0.0, False)),
    "dgp4": DgpSpec("dgp4", "Gumbel 2, N(s2(X),1.5^2)", 30,
                    _copula_dgp("dgp4", "gumbel", "gaussian", S2_H3, math.log(1.5), 0.0, True)),
    "dgp5": DgpSpec("dgp5", "Clayton 2, Poisson exp(1.5X)", 30,
                    _copula_dgp("dgp5", "clayton", "poisson", (0.0, 1.5), None, 0.0, False)),
    "dgp6": DgpSpec("dgp6", "Clayton 2, Poisson exp(s2(X))", 30,
                    _copula_dgp("dgp6", "clayton", "poisson", S2_H3, None, 0.0, True)),
    "dgp7": DgpSpec("dgp7", "Frank 6, Bernoulli logit s7(X)", 30,
                    _copula_dgp("dgp7", "frank", "bernoulli", (-1.69, 3.0), None, 6.0, False)),
    "dgp8": DgpSpec("dgp8", "Frank 6, Bernoulli logit s8(X)", 30,
                    _copula_dgp("dgp8", "frank", "bernoulli", S8_H3, None, 6.0, True)),
    "dgp9": DgpSpec("dgp9", "Gaussian tau 0.5, N(a'x,1), a,X ~ U(0,1)", 30,
                    _many("dgp9", "gaussian", "gaussian", 0.5, 1.0, "uniform")),
    "dgp10": DgpSpec("dgp10", "Gumbel tau 0.5, N(a'x,sd^2), sd ~ U(3,10)", 30,
                     _many("dgp10", "gumbel", "gaussian", 0.5, 1.0, "uniform", (3.0, 10.0))),
    "dgp11": DgpSpec("dgp11", "Clayton tau 0.5, Poisson log-mean b'x, b ~ U(0,0.5), X ~ N(0,1)", 30,
                     _many("dgp11", "clayton", "poisson", 0.5, 0.5, "normal")),
    "dgp12": DgpSpec("dgp12", "Frank tau 0.5, Bernoulli logit a'x, a ~ U(0,0.1), X ~ N(0,1)", 30,
                     _many("dgp12", "frank", "bernoulli", 0.5, 0.1, "normal")),
}


_GENERATORS = {
    "uniform": lambda rng, size: rng.uniform(size=size),
    "uniform_sym": lambda rng, size: rng.uniform(-1.0, 1.0, size=size),
    "normal": lambda rng, size: rng.normal(size=size),
    "exponential": lambda rng, size: rng.exponential(size=size),
}


def custom(definition: dict) -> DgpSpec:
    """Design described by a mapping instead of a catalog name.

    Keys: ``copula``, ``margin``, ``theta`` (flat vector in the usual layout),
    optional ``margin_covariates`` / ``copula_covariates`` mapping column names
    to a generator (``uniform``, ``uniform_sym``, ``normal``, ``exponential``),
    optional ``name``, ``n`` and ``df``.
    """
    try:
        copula, margin = definition["copula"], definition["margin"]
        theta = np.asarray(definition["theta"], dtype=float)
    except KeyError as exc:
        raise ValueError(f"custom design is missing key {exc.args[0]!r}") from None
    mcov = dict(definition.get("margin_covariates", {}))
    ccov = dict(definition.get("copula_covariates", {}))
    for col, gen in {**mcov, **ccov}.items():
        if gen not in _GENERATORS:
            raise ValueError(f"unknown covariate generator {gen!r} for column {col!r}")
    spec = ModelSpec.make(copula, margin, tuple(mcov), tuple(ccov),
                          df=float(definition.get("df", 15.0)))
    if theta.size != spec.n_params:
        raise ValueError(f"custom design needs {spec.n_params} parameters, got {theta.size}")
    name = str(definition.get("name", "custom"))

    def build(K, n, rng):
        covs = {}
        for col, gen in {**mcov, **ccov}.items():
            if col not in covs:
                covs[col] = _GENERATORS[gen](rng, K * n)
        return _draw(name, spec, theta, [n] * K, covs, rng, tuple(mcov), tuple(ccov))

    return DgpSpec(name, f"{copula} copula, {margin} margins", int(definition.get("n", 5)), build)


def resolve(design) -> DgpSpec:
    """Catalog entry for a name, or a custom design for a mapping."""
    if isinstance(design, DgpSpec):
        return design
    if isinstance(design, dict):
        return custom(design)
    key = str(design).strip().lower()
    if key not in CATALOG:
        raise KeyError(f"unknown DGP {design!r}; expected one of {', '.join(CATALOG)}")
    return CATALOG[key]


def dgp(name, K: int, n: int | None = None, rng=None) -> DgpDraw:
    """Generate one dataset with ``K`` clusters of size ``n``.

    ``name`` is a catalog identifier (``exp1``..``exp8``, ``dgp1``..``dgp12``),
    a custom-design mapping (see :func:`custom`) or a :class:`DgpSpec`.
    """
    entry = resolve(name)
    if K < 1:
        raise ValueError("need at least one cluster")
    n = entry.default_n if n is None else int(n)
    if n < 1:
        raise ValueError("cluster size must be positive")
    rng = rng if rng is not None else np.random.default_rng()
    return entry.build(int(K), n, rng)
