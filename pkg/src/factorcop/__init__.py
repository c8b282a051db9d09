"""Factor copula regression models for clustered data."""
from .copulas import CopulaDomainError, CopulaNumericError, get_family
from .estimate import (FitOptions, FitResult, auto_start, covariance, fit, fit_independence,
                       select)
from .likelihood import (cluster_loglik, evaluate, obs_density, per_cluster_scores, score,
                         total_loglik)
from .margins import MarginDomainError, get_margin
from .model import ClusteredDataset, DataError, ModelSpec, ParamVector, QuadratureRule
from .predict import (cond_cdf, cond_mean, cond_quantile, latent_posterior, link_curve,
                      predict_clusters)

__version__ = "0.1.0"

__all__ = [
    "ClusteredDataset", "CopulaDomainError", "CopulaNumericError", "DataError", "FitOptions",
    "FitResult", "MarginDomainError", "ModelSpec", "ParamVector", "QuadratureRule",
    "auto_start", "cluster_loglik", "cond_cdf", "cond_mean", "cond_quantile", "covariance",
    "evaluate", "fit", "fit_independence", "get_family", "get_margin", "latent_posterior",
    "link_curve", "obs_density", "per_cluster_scores", "predict_clusters", "score", "select",
    "total_loglik",
]
