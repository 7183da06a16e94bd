"""KKT residual ``F[U, x, t]`` by eliminating states and costates.

For a given decision vector the states come from :func:`ocp.state_fit`; the
costates then solve the linear system obtained by setting the x-gradient of
the Lagrangian

    phi(x_N, p) + sum_i L_i dtau + lam' S(x, U) + sum_i mu_i' C_i dtau + nu' psi(x_N, p)

to zero, where ``S`` is :func:`ocp.lsq_stationarity`. ``F`` stacks the
u-gradient of the Lagrangian, ``C dtau``, ``psi`` and the p-gradient.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import SingularMatrixError
from .krylov import LinearOperator, dense_materialize, dense_solve
from .nlsq import NlsqConfig
from .ocp import lsq_stationarity, node_times, state_fit, unpack

FIT_CONFIG = NlsqConfig(grad_tol=1e-13, step_tol=1e-15, max_iters=100)


def _rel_step(v, base=1e-7):
    return base * (1.0 + np.abs(v))


def lagrangian_rest(traj, U, problem, grid, t=0.0):
    """Lagrangian without the costate term."""
    N = grid.N
    dec = unpack(U, problem, N)
    tau = node_times(grid, problem, t)
    val = float(problem.phi(traj[N], dec.p))
    for i in range(N):
        val += grid.dtau * float(problem.L(tau[i], traj[i], dec.u[i], dec.p))
        if problem.n_c:
            val += grid.dtau * float(dec.mu[i] @ np.asarray(problem.C(tau[i], traj[i], dec.u[i], dec.p)))
    if problem.n_psi:
        val += float(dec.nu @ np.asarray(problem.psi(traj[N], dec.p)))
    return val


def lagrangian(traj, lam, U, problem, grid, t=0.0):
    lam = np.ravel(lam)
    return lagrangian_rest(traj, U, problem, grid, t) + lam @ lsq_stationarity(traj, U, problem, grid, t)


def stationarity_matrix(traj, U, problem, grid, t=0.0):
    """``dS/dx`` over ``x_1..x_N`` (analytic if the problem provides it)."""
    if problem.stationarity_jacobian is not None:
        return np.asarray(problem.stationarity_jacobian(traj, U), dtype=float)
    N, n = grid.N, problem.n_x
    z = traj[1:].ravel()
    steps = _rel_step(np.full(z.size, np.linalg.norm(z)))
    M = np.empty((z.size, z.size))
    for k in range(z.size):
        zp, zm = z.copy(), z.copy()
        zp[k] += steps[k]
        zm[k] -= steps[k]
        Sp = lsq_stationarity(np.vstack([traj[0], zp.reshape(N, n)]), U, problem, grid, t)
        Sm = lsq_stationarity(np.vstack([traj[0], zm.reshape(N, n)]), U, problem, grid, t)
        M[:, k] = (Sp - Sm) / (2 * steps[k])
    return M


def _rest_gradient_x(traj, U, problem, grid, t):
    N, n = grid.N, problem.n_x
    z = traj[1:].ravel()
    grad = np.empty(z.size)
    for k in range(z.size):
        h = _rel_step(z[k])
        zp, zm = z.copy(), z.copy()
        zp[k] += h
        zm[k] -= h
        Lp = lagrangian_rest(np.vstack([traj[0], zp.reshape(N, n)]), U, problem, grid, t)
        Lm = lagrangian_rest(np.vstack([traj[0], zm.reshape(N, n)]), U, problem, grid, t)
        grad[k] = (Lp - Lm) / (2 * h)
    return grad


def costate_solve(traj, U, problem, grid, t=0.0, M=None):
    """Costates ``lam_1..lam_N`` as an (N, n_x) array."""
    if M is None:
        M = stationarity_matrix(traj, U, problem, grid, t)
    rhs = -_rest_gradient_x(traj, U, problem, grid, t)
    try:
        lam = dense_solve(M.T, rhs)
    except SingularMatrixError as exc:
        raise SingularMatrixError(f"costate system (Hessian of the state fit) is singular: {exc}") from exc
    return lam.reshape(grid.N, problem.n_x)


@dataclass
class KktWorkspace:
    traj: np.ndarray
    lam: np.ndarray
    M: np.ndarray
    F: np.ndarray


def _lagrangian_gradient_u_p(traj, lam, U, problem, grid, t):
    N = grid.N
    U = np.asarray(U, dtype=float)
    nu_end = N * problem.n_u
    p_start = problem.dim(N) - problem.n_p
    idx = list(range(nu_end)) + list(range(p_start, problem.dim(N)))
    out = np.empty(len(idx))
    for j, k in enumerate(idx):
        h = _rel_step(U[k])
        Up, Um = U.copy(), U.copy()
        Up[k] += h
        Um[k] -= h
        out[j] = (lagrangian(traj, lam, Up, problem, grid, t) - lagrangian(traj, lam, Um, problem, grid, t)) / (2 * h)
    return out[:nu_end], out[nu_end:]


def kkt_evaluate(U, x, t, problem, grid, fit_cfg=FIT_CONFIG, warm=None):
    """Full evaluation returning states, costates and ``F``."""
    N = grid.N
    dec = unpack(U, problem, N)
    traj = state_fit(x, U, problem, grid, fit_cfg, warm=warm, t=t)
    M = stationarity_matrix(traj, U, problem, grid, t)
    lam = costate_solve(traj, U, problem, grid, t, M=M)
    Lu, Lp = _lagrangian_gradient_u_p(traj, lam, U, problem, grid, t)
    tau = node_times(grid, problem, t)
    C = [grid.dtau * np.asarray(problem.C(tau[i], traj[i], dec.u[i], dec.p), dtype=float) for i in range(N)]
    psi = np.asarray(problem.psi(traj[N], dec.p), dtype=float) if problem.n_psi else np.zeros(0)
    F = np.concatenate([Lu, np.ravel(C) if problem.n_c else np.zeros(0), psi, Lp])
    return KktWorkspace(traj, lam, M, F)


def kkt_residual(U, x, t, problem, grid, fit_cfg=FIT_CONFIG, warm=None):
    return kkt_evaluate(U, x, t, problem, grid, fit_cfg, warm).F


@dataclass
class KktFunction:
    """``F(U, x, t)`` for a generic problem, warm-starting each state fit.

    The warm start is the trajectory of the previous evaluation; evaluations
    are sequential so the cache needs no locking.
    """

    problem: object
    grid: object
    fit_cfg: NlsqConfig = FIT_CONFIG
    _warm: np.ndarray = field(default=None, repr=False)

    @property
    def dim(self):
        return self.problem.dim(self.grid.N)

    def __call__(self, U, x, t=0.0):
        ws = kkt_evaluate(U, x, t, self.problem, self.grid, self.fit_cfg, warm=self._warm)
        self._warm = ws.traj
        return ws.F

    def first_control(self, U):
        return unpack(U, self.problem, self.grid.N).u[0]


def fd_directional(F, U, x, t, V, h, F_base=None):
    """Forward difference ``(F(U + hV) - F(U)) / h``."""
    if not h > 0:
        raise ValueError("h must be positive")
    U = np.asarray(U, dtype=float)
    if F_base is None:
        F_base = F(U, x, t)
    return (F(U + h * np.asarray(V, dtype=float), x, t) - F_base) / h


def fd_operator(F, U, x, t, h, F_base=None):
    """Forward-difference Jacobian action wrapped as a :class:`LinearOperator`."""
    U = np.asarray(U, dtype=float)
    if F_base is None:
        F_base = F(U, x, t)
    return LinearOperator(U.size, lambda V: fd_directional(F, U, x, t, V, h, F_base))


def symmetry_check(F, U, x, t, h):
    """Relative asymmetry ``|A - A'|_inf / |A|_inf`` of the FD Jacobian."""
    A = dense_materialize(fd_operator(F, U, x, t, h))
    return asymmetry(A)


def asymmetry(A):
    A = np.asarray(A, dtype=float)
    denom = np.linalg.norm(A, np.inf)
    return float(np.linalg.norm(A - A.T, np.inf) / denom) if denom > 0 else 0.0


def linear_residual(M):
    """``F(U) = M U`` as a residual callable, for tests and demos."""
    M = np.asarray(M, dtype=float)

    def F(U, x=None, t=0.0):
        return M @ np.asarray(U, dtype=float)

    return F


__all__ = [
    "KktFunction",
    "KktWorkspace",
    "asymmetry",
    "costate_solve",
    "fd_directional",
    "fd_operator",
    "kkt_evaluate",
    "kkt_residual",
    "lagrangian",
    "lagrangian_rest",
    "linear_residual",
    "stationarity_matrix",
    "symmetry_check",
]
