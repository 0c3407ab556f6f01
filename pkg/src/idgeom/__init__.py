"""Intrinsic-dimension and representation-geometry toolkit for text embeddings."""

__version__ = "0.1.0"

from .core import PointCloud, RngSpec, knn, mst_total_length, thread_limit
from .errors import (
    DegenerateFit,
    DegenerateInput,
    IdGeomError,
    InvalidArgument,
    InvalidInput,
    MissingAnnotation,
)
from .estimators import (
    EstimatorConfig,
    IdEstimate,
    PhdConfig,
    estimate,
    estimate_all,
    mle_estimate,
    phd_estimate,
    tle_estimate,
    twonn_estimate,
)
from .report import Report
from .synth import sample_manifold

__all__ = [
    "DegenerateFit", "DegenerateInput", "EstimatorConfig", "IdEstimate", "IdGeomError",
    "InvalidArgument", "InvalidInput", "MissingAnnotation", "PhdConfig", "PointCloud",
    "Report", "RngSpec", "__version__", "estimate", "estimate_all", "knn", "mle_estimate",
    "mst_total_length", "phd_estimate", "sample_manifold", "thread_limit", "tle_estimate",
    "twonn_estimate",
]
