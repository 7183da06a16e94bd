"""Exception hierarchy shared by the solver modules."""

import numpy as np


class SolverError(RuntimeError):
    """Base class for numerical failures raised by lsmpc."""


class NonFiniteError(SolverError, FloatingPointError):
    """A callback or operator produced NaN or Inf."""


class SingularMatrixError(SolverError, np.linalg.LinAlgError):
    """Gaussian elimination met a pivot below the singularity threshold."""


class NlsqError(SolverError):
    """Nonlinear least squares iteration could not continue.

    ``x_last`` holds the last iterate at which residual and Jacobian were finite.
    """

    def __init__(self, message, x_last=None):
        super().__init__(message)
        self.x_last = x_last


class ConvergenceError(SolverError):
    """An outer Newton iteration did not reach its tolerance.

    Carries the best iterate found and the residual-norm history.
    """

    def __init__(self, message, best=None, history=None):
        super().__init__(message)
        self.best = best
        self.history = list(history or [])
