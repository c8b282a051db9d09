"""Data generation, design catalog, spline bases and the replication harness."""
from .dgp import CATALOG, DgpDraw, DgpSpec, custom, dgp, resolve, s1, s2, s7, s8
from .harness import HarnessReport, load_config, prediction_errors, run, write_report
from .sampler import sample_cluster, sample_dataset, sample_uniforms
from .splines import SplineBasis, bspline_basis

__all__ = [
    "CATALOG", "DgpDraw", "DgpSpec", "HarnessReport", "SplineBasis", "bspline_basis",
    "custom", "dgp", "load_config", "prediction_errors", "resolve", "run",
    "sample_cluster", "sample_dataset", "sample_uniforms", "s1", "s2", "s7", "s8",
    "write_report",
]
