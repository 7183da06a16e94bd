"""Newton-Krylov receding-horizon control with a least-squares state predictor."""

from .errors import (
    ConvergenceError,
    NlsqError,
    NonFiniteError,
    SingularMatrixError,
    SolverError,
)
from .kkt import KktFunction, fd_directional, fd_operator, kkt_residual, symmetry_check
from .krylov import GmresConfig, GmresResult, LinearOperator, dense_materialize, dense_solve, gmres_solve
from .mpc import MpcConfig, SimLog, initialize_U0, receding_step, simulate_closed_loop
from .nlsq import NlsqConfig, NlsqResult, ResidualProblem, nlsq_solve
from .ocp import HorizonGrid, ProblemDef, state_fit
from .sphere import SphereModel, SphereParams, plant_step, sphere_F

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError",
    "GmresConfig",
    "GmresResult",
    "HorizonGrid",
    "KktFunction",
    "LinearOperator",
    "MpcConfig",
    "NlsqConfig",
    "NlsqError",
    "NlsqResult",
    "NonFiniteError",
    "ProblemDef",
    "ResidualProblem",
    "SimLog",
    "SingularMatrixError",
    "SolverError",
    "SphereModel",
    "SphereParams",
    "dense_materialize",
    "dense_solve",
    "fd_directional",
    "fd_operator",
    "gmres_solve",
    "initialize_U0",
    "kkt_residual",
    "nlsq_solve",
    "plant_step",
    "receding_step",
    "simulate_closed_loop",
    "sphere_F",
    "state_fit",
    "symmetry_check",
]
