"""Entropic optimal transport on 1-D grids with curvature and log-Sobolev certification."""

from .fixedpoint import (
    FixedPointSolution,
    ProblemParams,
    curvature_envelopes,
    fixed_point_bracket,
    solve_fixed_point,
    transfer_inverse,
    transfer_map,
)
from .grids import Grid1D, GridFunction
from .schrodinger import (
    BridgeDensity,
    MarginalSpec,
    SchrodingerBridge,
    SinkhornState,
    sinkhorn_solve,
)
from .validation import ConvergenceError, PreconditionError
from .weakconvex import (
    ConvexityProfile,
    PairwiseEnvelope,
    PiecewiseProfile,
    certify_envelope,
    pairwise_envelope,
    smooth_dip_constant,
    tanh_perturbation,
)

__version__ = "0.1.0"

__all__ = [
    "BridgeDensity",
    "ConvergenceError",
    "ConvexityProfile",
    "FixedPointSolution",
    "Grid1D",
    "GridFunction",
    "MarginalSpec",
    "PairwiseEnvelope",
    "PiecewiseProfile",
    "PreconditionError",
    "ProblemParams",
    "SchrodingerBridge",
    "SinkhornState",
    "certify_envelope",
    "curvature_envelopes",
    "fixed_point_bracket",
    "pairwise_envelope",
    "sinkhorn_solve",
    "smooth_dip_constant",
    "solve_fixed_point",
    "tanh_perturbation",
    "transfer_inverse",
    "transfer_map",
    "__version__",
]
