"""Frame-set matching by entropic and unbalanced optimal transport."""

from ._kernels import BACKEND
from .solvers import (
    OtConfig,
    TransportPlan,
    cost_matrix,
    hungarian,
    ot_objective,
    sinkhorn_ot,
    sinkhorn_uot,
    soft_marginals,
    uot_objective,
    video_distance,
    video_match,
)

__all__ = [
    "BACKEND",
    "OtConfig",
    "TransportPlan",
    "cost_matrix",
    "hungarian",
    "ot_objective",
    "sinkhorn_ot",
    "sinkhorn_uot",
    "soft_marginals",
    "uot_objective",
    "video_distance",
    "video_match",
]
