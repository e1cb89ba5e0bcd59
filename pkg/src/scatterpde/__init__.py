"""Learn linear advection-diffusion equations from field snapshots at scattered points.

Spatial derivatives come from per-point Taylor least-squares stencils; equation
coefficients are fitted by unrolling forward-Euler steps and matching the observed
trajectory.
"""

from .errors import DivergenceError, InsufficientNeighborsError, UnstableEquationError
from .model import PDEModel, Reconstruction, euler_step, reconstruct, reconstruction_mse, rollout
from .pointcloud import (
    Domain,
    NeighborTable,
    PointSet,
    build_neighbors,
    sample_grid,
    sample_lattice,
    sample_random,
)
from .spectral import (
    EQUATIONS,
    FieldSeries,
    PDECoefficients,
    SpectralField,
    evaluate_at,
    evolve,
    generate_series,
    random_initial,
)
from .stencil import DerivativeOperator, TaylorStencil, apply, build_operator, build_stencil
from .train import TrainConfig, TrainReport, train

__version__ = "0.1.0"

__all__ = [
    "DivergenceError",
    "InsufficientNeighborsError",
    "UnstableEquationError",
    "PDEModel",
    "Reconstruction",
    "euler_step",
    "reconstruct",
    "reconstruction_mse",
    "rollout",
    "Domain",
    "NeighborTable",
    "PointSet",
    "build_neighbors",
    "sample_grid",
    "sample_lattice",
    "sample_random",
    "EQUATIONS",
    "FieldSeries",
    "PDECoefficients",
    "SpectralField",
    "evaluate_at",
    "evolve",
    "generate_series",
    "random_initial",
    "DerivativeOperator",
    "TaylorStencil",
    "apply",
    "build_operator",
    "build_stencil",
    "TrainConfig",
    "TrainReport",
    "train",
]
