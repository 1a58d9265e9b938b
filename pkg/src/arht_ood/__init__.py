"""OOD detection as high-dimensional two-sample testing on BNN embeddings."""

from .detector import (
    DetectionReport,
    InDistributionProfile,
    bh_threshold,
    build_profile,
    detect,
    score_point,
)
from .data import LabeledVectors, SyntheticSpec, gen_null_pair, gen_table8, read_idx
from .estimators import ARHTDetector, BayesianMLPEncoder
from .hdtest import (
    ArhtResult,
    DistributionSummary,
    PooledCovariance,
    SpectralCache,
    adaptive_arht,
    arht,
    hotelling_t2,
    pooled_covariance,
    rht,
    select_lambda,
    stieltjes,
    theta_corrections,
)

__version__ = "0.1.0"

__all__ = [
    "ARHTDetector",
    "ArhtResult",
    "BayesianMLPEncoder",
    "DetectionReport",
    "DistributionSummary",
    "InDistributionProfile",
    "LabeledVectors",
    "PooledCovariance",
    "SpectralCache",
    "SyntheticSpec",
    "adaptive_arht",
    "arht",
    "bh_threshold",
    "build_profile",
    "detect",
    "gen_null_pair",
    "gen_table8",
    "hotelling_t2",
    "pooled_covariance",
    "read_idx",
    "rht",
    "score_point",
    "select_lambda",
    "stieltjes",
    "theta_corrections",
]
