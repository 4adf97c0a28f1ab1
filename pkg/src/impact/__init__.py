"""Importance-aware low-rank compression of linear layers."""
from .compressor import (
    METHODS,
    FactoredLayer,
    ImpactConfig,
    afm_factorize,
    factorize,
    factorize_impact,
    fwsvd_factorize,
    objective_f,
    objective_h,
    reconstruction_basis,
    select_rank,
    svd_factorize,
    transform_coeff,
    weighted_cov,
)
from .errors import ImpactError
from .linalg import sym_eig, truncated_svd
from .profiler import LayerStatsAccumulator, ProfiledLayer, profile_samples

__version__ = "0.1.0"

__all__ = [
    "METHODS", "FactoredLayer", "ImpactConfig", "ImpactError", "LayerStatsAccumulator",
    "ProfiledLayer", "afm_factorize", "factorize", "factorize_impact", "fwsvd_factorize",
    "objective_f", "objective_h", "profile_samples", "reconstruction_basis", "select_rank",
    "svd_factorize", "sym_eig", "transform_coeff", "truncated_svd", "weighted_cov",
]
