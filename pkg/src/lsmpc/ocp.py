"""Discretized optimal control problem with a least-squares state fit.

The state over the horizon is not obtained by forward integration. Instead
``x_1..x_N`` minimize the weighted sum of squared dynamics defects ``R`` and
state-constraint values ``G`` with ``x_0`` held at the measured state.

Two scalings of the dynamics defect are supported:

``"rate"``
    ``R_i = (x_i - x_{i-1}) / dtau - f(tau_{i-1}, x_{i-1}, u_{i-1}, p)``
``"increment"``
    ``R_i = x_i - x_{i-1} - dtau * f(tau_{i-1}, x_{i-1}, u_{i-1}, p)``

The objective is ``0.5 * (alpha * |R|^2 + beta^2 * |G|^2)`` in both cases.
The two differ by a factor ``dtau^2`` in front of ``alpha``, which changes
what a given ``beta`` means.
"""

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from .errors import NlsqError, NonFiniteError
from .nlsq import NlsqConfig, ResidualProblem, nlsq_solve

SCALINGS = ("rate", "increment")


@dataclass(frozen=True)
class HorizonGrid:
    N: int
    dtau: float

    def __post_init__(self):
        if self.N < 1:
            raise ValueError(f"N must be >= 1, got {self.N}")
        if not self.dtau > 0:
            raise ValueError(f"dtau must be positive, got {self.dtau}")

    @classmethod
    def normalized(cls, N):
        """Uniform grid on the dimensionless interval [0, 1]."""
        return cls(N, 1.0 / N)


def _zero(*_):
    return np.zeros(0)


def _zero_scalar(*_):
    return 0.0


@dataclass(frozen=True)
class ProblemDef:
    """Dimensions, callbacks and weights of a horizon problem.

    All per-node callbacks take ``(tau, x, u, p)``; ``psi`` and ``phi`` take
    ``(x, p)``. ``fx`` returns ``df/dx`` (n_x by n_x) and ``gx`` returns
    ``dg/dx`` (n_g by n_x). ``stationarity_jacobian``, when given, returns the
    exact derivative of :func:`lsq_stationarity` with respect to ``x_1..x_N``
    as ``(traj, U) -> matrix``.
    """

    n_x: int
    n_u: int
    f: Callable
    fx: Callable
    n_g: int = 0
    n_c: int = 0
    n_psi: int = 0
    n_p: int = 0
    g: Callable = _zero
    gx: Optional[Callable] = None
    C: Callable = _zero
    psi: Callable = _zero
    L: Callable = _zero_scalar
    phi: Callable = _zero_scalar
    alpha: float = 1.0
    beta: float = 0.0
    residual_scaling: str = "rate"
    physical_time: bool = False
    stationarity_jacobian: Optional[Callable] = None

    def __post_init__(self):
        if self.residual_scaling not in SCALINGS:
            raise ValueError(f"residual_scaling must be one of {SCALINGS}")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.n_g and self.gx is None:
            raise ValueError("gx is required when n_g > 0")

    @property
    def weight_g(self):
        return self.beta**2

    def dim(self, N):
        """Length of the decision vector for an N-step horizon."""
        return N * self.n_u + N * self.n_c + self.n_psi + self.n_p


class Decision(NamedTuple):
    u: np.ndarray  # (N, n_u)
    mu: np.ndarray  # (N, n_c)
    nu: np.ndarray  # (n_psi,)
    p: np.ndarray  # (n_p,)


def unpack(U, problem, N):
    U = np.asarray(U, dtype=float)
    m = problem.dim(N)
    if U.shape != (m,):
        raise ValueError(f"decision vector has shape {U.shape}, expected ({m},)")
    a = N * problem.n_u
    b = a + N * problem.n_c
    c = b + problem.n_psi
    return Decision(
        U[:a].reshape(N, problem.n_u),
        U[a:b].reshape(N, problem.n_c),
        U[b:c],
        U[c:],
    )


def pack(dec):
    return np.concatenate([np.ravel(dec.u), np.ravel(dec.mu), np.ravel(dec.nu), np.ravel(dec.p)]).astype(float)


def node_times(grid, problem, t=0.0):
    """Times at which callbacks are evaluated, for nodes 0..N."""
    tau = np.arange(grid.N + 1) * grid.dtau
    return t + tau if problem.physical_time else tau


def _finite(value, what):
    value = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"{what} returned non-finite values")
    return value


def _as_traj(traj, problem, N):
    traj = np.asarray(traj, dtype=float)
    if traj.shape != (N + 1, problem.n_x):
        raise ValueError(f"trajectory has shape {traj.shape}, expected ({N + 1}, {problem.n_x})")
    return traj


def _scale(problem, grid):
    # rate-scaled residual = increment-scaled residual / dtau
    return 1.0 / grid.dtau if problem.residual_scaling == "rate" else 1.0


def build_B(grid, n_x):
    """Block lower-bidiagonal difference matrix, I/dtau on the diagonal."""
    N = grid.N
    B = np.kron(np.eye(N) - np.eye(N, k=-1), np.eye(n_x))
    return B / grid.dtau


def build_R(traj, U, problem, grid, t=0.0):
    N = grid.N
    traj = _as_traj(traj, problem, N)
    dec = unpack(U, problem, N)
    tau = node_times(grid, problem, t)
    s = _scale(problem, grid)
    out = np.empty((N, problem.n_x))
    for i in range(N):
        fi = _finite(problem.f(tau[i], traj[i], dec.u[i], dec.p), "f")
        out[i] = s * (traj[i + 1] - traj[i] - grid.dtau * fi)
    return out.ravel()


def _u_clamp(dec, i):
    # controls exist for nodes 0..N-1; node N reuses the last one
    return dec.u[min(i, len(dec.u) - 1)]


def build_G(traj, U, problem, grid, t=0.0):
    N = grid.N
    traj = _as_traj(traj, problem, N)
    dec = unpack(U, problem, N)
    tau = node_times(grid, problem, t)
    out = np.empty((N, problem.n_g))
    for i in range(1, N + 1):
        out[i - 1] = _finite(problem.g(tau[i], traj[i], _u_clamp(dec, i), dec.p), "g")
    return out.ravel()


def build_gradR(traj, U, problem, grid, t=0.0):
    N, n = grid.N, problem.n_x
    traj = _as_traj(traj, problem, N)
    dec = unpack(U, problem, N)
    tau = node_times(grid, problem, t)
    s = _scale(problem, grid)
    D = np.zeros((N * n, N * n))
    eye = np.eye(n)
    for i in range(N):
        D[i * n : (i + 1) * n, i * n : (i + 1) * n] = s * eye
        if i > 0:
            fx = _finite(problem.fx(tau[i], traj[i], dec.u[i], dec.p), "fx")
            D[i * n : (i + 1) * n, (i - 1) * n : i * n] = -s * (eye + grid.dtau * fx)
    return D


def build_gradG(traj, U, problem, grid, t=0.0):
    N, n, ng = grid.N, problem.n_x, problem.n_g
    traj = _as_traj(traj, problem, N)
    dec = unpack(U, problem, N)
    tau = node_times(grid, problem, t)
    D = np.zeros((N * ng, N * n))
    for i in range(1, N + 1):
        gx = _finite(problem.gx(tau[i], traj[i], _u_clamp(dec, i), dec.p), "gx").reshape(ng, n)
        D[(i - 1) * ng : i * ng, (i - 1) * n : i * n] = gx
    return D


def lsq_objective(traj, U, problem, grid, t=0.0):
    R = build_R(traj, U, problem, grid, t)
    val = problem.alpha * (R @ R)
    if problem.n_g and problem.weight_g:
        G = build_G(traj, U, problem, grid, t)
        val += problem.weight_g * (G @ G)
    return 0.5 * val


def lsq_stationarity(traj, U, problem, grid, t=0.0):
    """Gradient of :func:`lsq_objective` with respect to ``x_1..x_N``."""
    R = build_R(traj, U, problem, grid, t)
    out = problem.alpha * (build_gradR(traj, U, problem, grid, t).T @ R)
    if problem.n_g and problem.weight_g:
        G = build_G(traj, U, problem, grid, t)
        out += problem.weight_g * (build_gradG(traj, U, problem, grid, t).T @ G)
    return out


def euler_trajectory(x0, U, problem, grid, t=0.0):
    """Forward-Euler recursion; the exact minimizer when beta = 0."""
    N = grid.N
    dec = unpack(U, problem, N)
    tau = node_times(grid, problem, t)
    traj = np.empty((N + 1, problem.n_x))
    traj[0] = x0
    for i in range(N):
        traj[i + 1] = traj[i] + grid.dtau * _finite(problem.f(tau[i], traj[i], dec.u[i], dec.p), "f")
    return traj


class StateFitError(NlsqError):
    pass


def state_fit(x0, U, problem, grid, cfg=NlsqConfig(), warm=None, t=0.0):
    """Least-squares state trajectory with ``x_0 = x0`` fixed.

    ``warm`` is an (N+1, n_x) starting trajectory; the Euler trajectory is
    used when it is absent.
    """
    N, n = grid.N, problem.n_x
    x0 = _finite(x0, "initial state")
    if warm is None:
        start = euler_trajectory(x0, U, problem, grid, t)
    else:
        start = _as_traj(warm, problem, N)
    use_g = bool(problem.n_g and problem.weight_g)
    wa = np.sqrt(problem.alpha)
    wg = problem.beta

    def full(z):
        return np.vstack([x0, z.reshape(N, n)])

    def residual(z):
        traj = full(z)
        R = wa * build_R(traj, U, problem, grid, t)
        if use_g:
            return np.concatenate([R, wg * build_G(traj, U, problem, grid, t)])
        return R

    def jacobian(z):
        traj = full(z)
        J = wa * build_gradR(traj, U, problem, grid, t)
        if use_g:
            return np.vstack([J, wg * build_gradG(traj, U, problem, grid, t)])
        return J

    hessian = None
    if problem.stationarity_jacobian is not None:
        # d(stationarity)/dx is the exact Hessian of the fit objective
        def hessian(z):
            return problem.stationarity_jacobian(full(z), U)

    n_res = N * n + (N * problem.n_g if use_g else 0)
    prob = ResidualProblem(N * n, n_res, residual, jacobian, hessian)
    try:
        res = nlsq_solve(prob, start[1:].ravel(), cfg)
    except NlsqError as exc:
        raise StateFitError(f"state fit failed: {exc}", x_last=exc.x_last) from exc
    return full(res.x)
