"""Dense Levenberg-Marquardt for small nonlinear least squares problems."""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .errors import NlsqError, SingularMatrixError
from .krylov import dense_solve

_ROUNDING = 4 * np.finfo(float).eps


@dataclass(frozen=True)
class ResidualProblem:
    """Residual map with its Jacobian.

    ``hessian`` is optional; when present it must return the exact Hessian of
    ``0.5 * |r|^2`` and replaces the Gauss-Newton matrix ``J'J`` in the
    damped step, which restores quadratic convergence on large-residual
    problems.
    """

    n_vars: int
    n_res: int
    residual: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    hessian: Optional[Callable[[np.ndarray], np.ndarray]] = None


@dataclass(frozen=True)
class NlsqConfig:
    grad_tol: float = 1e-10
    step_tol: float = 1e-15
    max_iters: int = 200
    initial_damping: float = 1e-3

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if min(self.grad_tol, self.step_tol, self.initial_damping) < 0:
            raise ValueError("tolerances and damping must be non-negative")


@dataclass
class NlsqResult:
    x: np.ndarray
    grad_norm: float
    iters: int
    status: str  # "gradient", "step", "max_iters" or "stalled"
    cost: float

    def __iter__(self):
        return iter((self.x, self.grad_norm, self.iters))


def _evaluate(prob, x):
    r = np.asarray(prob.residual(x), dtype=float)
    if r.shape != (prob.n_res,):
        raise ValueError(f"residual has shape {r.shape}, expected ({prob.n_res},)")
    if not np.all(np.isfinite(r)):
        return r, None
    J = np.asarray(prob.jacobian(x), dtype=float)
    if J.shape != (prob.n_res, prob.n_vars):
        raise ValueError(f"jacobian has shape {J.shape}, expected ({prob.n_res}, {prob.n_vars})")
    return r, J


def _damped_step(H, JTJ, grad, damping):
    scale = np.maximum(np.diag(JTJ), 1e-12 * max(1.0, np.max(np.diag(JTJ))))
    A = H + damping * np.diag(scale)
    try:
        return scipy.linalg.cho_solve(scipy.linalg.cho_factor(A), grad)
    except np.linalg.LinAlgError:
        if H is not JTJ:
            # indefinite exact Hessian: let the caller raise the damping
            raise SingularMatrixError("damped Hessian is not positive definite")
        return dense_solve(A, grad)


def nlsq_solve(prob, x_init, cfg=NlsqConfig()):
    """Minimize ``0.5 * ||r(x)||^2`` from ``x_init``.

    Damping multiplies by 10 on a rejected trial and divides by 10 on an
    accepted one. A trial is accepted when it lowers the cost, or when the
    cost ties to within a few ulps and the gradient norm drops (this lets the
    iteration reach gradients far below sqrt(eps) * cost).

    Returns an :class:`NlsqResult`; unpacking it yields
    ``(x, grad_norm, iters)``.
    """
    x = np.array(x_init, dtype=float)
    if x.shape != (prob.n_vars,):
        raise ValueError(f"x_init has shape {x.shape}, expected ({prob.n_vars},)")
    r, J = _evaluate(prob, x)
    if J is None or not np.all(np.isfinite(J)):
        raise NlsqError("residual or jacobian not finite at the initial point", x_last=None)
    cost = 0.5 * (r @ r)
    grad = J.T @ r
    gnorm = float(np.max(np.abs(grad))) if grad.size else 0.0
    damping = cfg.initial_damping
    status = "max_iters"
    iters = 0

    while iters < cfg.max_iters:
        if gnorm <= cfg.grad_tol:
            status = "gradient"
            break
        iters += 1
        try:
            JTJ = J.T @ J
            H = JTJ if prob.hessian is None else np.asarray(prob.hessian(x), dtype=float)
            delta = _damped_step(H, JTJ, grad, damping)
        except SingularMatrixError:
            damping = max(10.0 * damping, 1e-8)
            continue
        x_new = x - delta
        r_new, J_new = _evaluate(prob, x_new)
        if J_new is None or not np.all(np.isfinite(J_new)):
            raise NlsqError("non-finite residual or jacobian during iteration", x_last=x)
        cost_new = 0.5 * (r_new @ r_new)
        grad_new = J_new.T @ r_new
        gnorm_new = float(np.max(np.abs(grad_new)))
        tiny = np.linalg.norm(delta) <= cfg.step_tol * (np.linalg.norm(x) + cfg.step_tol)
        # below rounding the cost cannot rank iterates; the gradient still can
        tie = cost_new <= cost * (1.0 + _ROUNDING * prob.n_res) and gnorm_new < gnorm
        if cost_new < cost or tie:
            x, r, J, cost = x_new, r_new, J_new, cost_new
            grad, gnorm = grad_new, gnorm_new
            damping /= 10.0
            if tiny:
                status = "step"
                break
        elif tiny:
            status = "step"
            break
        else:
            damping = max(10.0 * damping, 1e-12)
            if damping > 1e16:
                status = "stalled"
                break

    if status == "max_iters" and gnorm <= cfg.grad_tol:
        status = "gradient"
    return NlsqResult(x, gnorm, iters, status, cost)
