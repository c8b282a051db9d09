"""Data containers shared by the likelihood, estimation and prediction code."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .copulas import CopulaFamily, get_family
from .margins import MarginFamily, get_margin


class DataError(ValueError):
    """Invalid or inconsistent clustered data."""


@dataclass
class ClusteredDataset:
    """Responses, named covariates and cluster membership.

    Rows are stored sorted by cluster (stable, so within-cluster order is kept);
    ``order`` maps stored rows back to the caller's row order.  Cluster labels
    may be any hashable values and are reindexed to ``0..K-1`` in order of first
    appearance.
    """

    y: np.ndarray
    cluster: np.ndarray
    covariates: dict = field(default_factory=dict)
    labels: list = field(default_factory=list)
    order: np.ndarray = None

    @classmethod
    def from_arrays(cls, y, cluster, covariates=None):
        y = np.asarray(y, dtype=float).ravel()
        raw = np.asarray(cluster).ravel()
        n = y.size
        if n == 0:
            raise DataError("no data rows")
        if raw.size != n:
            raise DataError("cluster vector length does not match the response")
        covariates = {str(k): np.asarray(v, dtype=float).ravel()
                      for k, v in (covariates or {}).items()}
        for name, col in covariates.items():
            if col.size != n:
                raise DataError(f"covariate {name!r} has {col.size} values, expected {n}")
        labels, first, codes = np.unique(raw, return_index=True, return_inverse=True)
        # relabel by first appearance so cluster order follows the input
        rank = np.empty(labels.size, dtype=int)
        rank[np.argsort(first, kind="stable")] = np.arange(labels.size)
        codes = rank[codes.ravel()]
        ordered_labels = [labels[i].item() if hasattr(labels[i], "item") else labels[i]
                          for i in np.argsort(first, kind="stable")]
        order = np.argsort(codes, kind="stable")
        return cls(y=y[order], cluster=codes[order],
                   covariates={k: v[order] for k, v in covariates.items()},
                   labels=ordered_labels, order=order)

    def __post_init__(self):
        if self.order is None:
            self.order = np.arange(self.y.size)
        self.cluster = np.asarray(self.cluster, dtype=int)
        if np.any(np.diff(self.cluster) < 0):
            raise DataError("rows must be sorted by cluster; use from_arrays")
        if not self.labels:
            self.labels = list(range(int(self.cluster.max()) + 1 if self.cluster.size else 0))

    @property
    def n_obs(self) -> int:
        return int(self.y.size)

    @property
    def n_clusters(self) -> int:
        return int(self.cluster.max()) + 1

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.cluster, minlength=self.n_clusters)

    @property
    def starts(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)[:-1]])

    @property
    def lambda_k(self) -> float:
        """Cluster-size imbalance diagnostic ``sum n_k^2 / N``."""
        return float(np.sum(self.sizes.astype(float) ** 2) / self.n_obs)

    def design(self, names: Sequence[str]) -> np.ndarray:
        """Covariate matrix for ``names`` (no intercept column)."""
        missing = [n for n in names if n not in self.covariates]
        if missing:
            raise DataError(f"missing covariate column(s): {', '.join(missing)}")
        if not names:
            return np.zeros((self.n_obs, 0))
        return np.column_stack([self.covariates[n] for n in names])

    def subset(self, clusters) -> "ClusteredDataset":
        """Dataset restricted to the given internal cluster indices."""
        clusters = np.atleast_1d(clusters)
        mask = np.isin(self.cluster, clusters)
        return ClusteredDataset.from_arrays(
            self.y[mask], np.asarray(self.cluster)[mask],
            {k: v[mask] for k, v in self.covariates.items()})


@dataclass(frozen=True)
class ModelSpec:
    """Copula family, margin family and the covariates entering each link."""

    copula: CopulaFamily
    margin: MarginFamily
    margin_covariates: tuple = ()
    copula_covariates: tuple = ()

    @classmethod
    def make(cls, copula, margin, margin_covariates=(), copula_covariates=(), df=15.0):
        return cls(get_family(copula, df=df), get_margin(margin),
                   tuple(margin_covariates), tuple(copula_covariates))

    @property
    def n_margin_coef(self) -> int:
        return 1 + len(self.margin_covariates)

    @property
    def n_dispersion(self) -> int:
        return self.margin.n_dispersion

    @property
    def n_copula_coef(self) -> int:
        return 1 + len(self.copula_covariates)

    @property
    def n_params(self) -> int:
        return self.n_margin_coef + self.n_dispersion + self.n_copula_coef

    def param_names(self) -> list[str]:
        names = ["margin:(Intercept)"] + [f"margin:{c}" for c in self.margin_covariates]
        if self.n_dispersion:
            names.append("margin:log_sd")
        names += ["copula:(Intercept)"] + [f"copula:{c}" for c in self.copula_covariates]
        return names

    def split(self, theta):
        """Split a flat vector into (alpha, log_sd or None, beta)."""
        theta = np.asarray(theta, dtype=float)
        if theta.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {theta.size}")
        m, d = self.n_margin_coef, self.n_dispersion
        alpha = theta[:m]
        disp = float(theta[m]) if d else None
        beta = theta[m + d:]
        return alpha, disp, beta

    def describe(self) -> dict:
        out = {"copula": self.copula.name, "margin": self.margin.name,
               "margin_covariates": list(self.margin_covariates),
               "copula_covariates": list(self.copula_covariates)}
        if self.copula.name == "student":
            out["df"] = self.copula.df
        return out


@dataclass
class ParamVector:
    """Flat unconstrained parameter vector with its block layout."""

    values: np.ndarray
    spec: ModelSpec

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).copy()
        if self.values.size != self.spec.n_params:
            raise ValueError(f"expected {self.spec.n_params} parameters, got {self.values.size}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("parameter vector has non-finite entries")

    @property
    def names(self):
        return self.spec.param_names()

    @property
    def alpha(self):
        return self.spec.split(self.values)[0]

    @property
    def log_sd(self):
        return self.spec.split(self.values)[1]

    @property
    def beta(self):
        return self.spec.split(self.values)[2]

    def as_dict(self):
        return dict(zip(self.names, map(float, self.values)))

    @classmethod
    def from_dict(cls, spec: ModelSpec, values: dict):
        names = spec.param_names()
        missing = [n for n in names if n not in values]
        if missing:
            raise ValueError(f"missing parameter(s): {', '.join(missing)}")
        return cls(np.array([float(values[n]) for n in names]), spec)


DEFAULT_GRADING = 3


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights on (0, 1) for integrating out the latent factor.

    Gauss-Legendre nodes ``t`` on (0, 1) are pushed through the sigmoidal map
    ``v = t^p / (t^p + (1 - t)^p)``.  With ``p > 1`` nodes cluster near 0 and 1,
    which restores fast convergence for integrands that behave like ``v^g``
    with fractional ``g`` at the ends (the usual case for products of copula
    densities).  ``p = 1`` is the plain affine map.
    """

    nodes: np.ndarray
    weights: np.ndarray
    grading: int = 1

    @classmethod
    def gauss_legendre(cls, n: int = 64, grading: int = DEFAULT_GRADING) -> "QuadratureRule":
        if n < 1:
            raise ValueError("need at least one quadrature node")
        if grading < 1:
            raise ValueError("grading exponent must be at least 1")
        x, w = np.polynomial.legendre.leggauss(int(n))
        t, w = (x + 1) / 2, w / 2
        a, b = t**grading, (1 - t) ** grading
        nodes = a / (a + b)
        dv = grading * t ** (grading - 1) * (1 - t) ** (grading - 1) / (a + b) ** 2
        weights = w * dv
        if not (np.all((nodes > 0) & (nodes < 1)) and np.all(np.diff(nodes) > 0)):
            raise ValueError(f"{n} nodes with grading {grading} put nodes on the boundary "
                             "in double precision; lower the grading or the node count")
        # the mapped rule is exact for constants only up to rounding; renormalize
        return cls(nodes, weights / weights.sum(), int(grading))

    @property
    def size(self) -> int:
        return int(self.nodes.size)
