"""Bound-preserving fourth-order finite differences on Q2 Gauss-Lobatto grids."""

from .errors import (
    BpfdError,
    Breakdown,
    DimensionMismatch,
    DomainError,
    GridError,
    IncompatibleRHS,
    InsufficientHistory,
    MaxIterExceeded,
    NoDoubleWell,
    SignConditionViolated,
    SignPatternViolated,
    SingularMatrix,
)
from .grid import BC, Grid1D, Grid2D, PointClass, classify, classify_all
from .linalg import KrylovConfig, LaplacianPrecond, bicgstab, build_laplacian_precond, poisson_solve
from .models import EnergyKind, EnergyModel, dt_bound, f_prime, pointwise_rhs_map, solve_beta
from .monotonicity import (
    certify,
    check_lorenz,
    constraints_1d,
    constraints_2d,
    dense_inverse_nonneg,
    is_m_matrix_via_scaling,
    lorenz_split,
)
from .operators import ConvDiffOperator, FieldState, VelocityField, apply_L, assemble_matrix, build_ops_1d
from .stepping import StepPlan, step_backward_euler, step_imex_allen_cahn, step_imex_bdf3
from .vorticity import FlowState, bdf3_flow_step, flow_step, shear_layer_init

__all__ = [name for name in dir() if not name.startswith("_")]
