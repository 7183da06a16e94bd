"""Minimum-time motion on the unit sphere with a slack-relaxed control bound.

Dynamics ``xdot = A(u) x`` with ``A(u)`` the cross-product matrix of the unit
axis ``w(u) = (-sin u, cos u, 0)``. The bound ``|u - c| <= r`` becomes the
equality ``(u - c)^2 + u_d^2 - r^2 = 0`` with slack ``u_d``. The horizon is
the time to go ``p`` mapped onto ``tau in [0, 1]``.

The predictor fits ``x_1..x_N`` to

    sum_i |x_i - x_{i-1} - dtau p A(u_{i-1}) x_{i-1}|^2 + beta^2 (x_i'x_i - 1)^2

and the decision vector is laid out as ``[u (N), u_d (N), mu (N), nu, p]``
where ``nu`` keeps only the x and y components of the terminal constraint.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import SingularMatrixError
from .krylov import dense_factor
from .nlsq import NlsqConfig
from .ocp import HorizonGrid, ProblemDef, state_fit

P_MIN = 1e-6
# Extended precision for the post-fit pipeline (plain float64 where the
# platform has no wider long double). F is very sensitive to the fitted
# states through the costates; double rounding there would leave about
# 1e-12 of noise in F, which forward differences with h = 1e-8 turn into
# 1e-4 relative Jacobian error.
EXT = np.longdouble
FIT_CONFIG = NlsqConfig(grad_tol=1e-10, step_tol=1e-15, max_iters=100)


@dataclass(frozen=True)
class SphereParams:
    c: float = 0.5
    r: float = 0.1
    w_d: float = 0.005
    beta: float = 10.0
    x0: tuple = (0.0, 0.0, 1.0)
    x_f: tuple = (np.cos(0.5) * np.cos(0.45), np.cos(0.5) * np.sin(0.45), np.sin(0.5))
    N: int = 10
    dt: float = 1.0 / 200
    h: float = 1e-8
    gmres_tol: float = 1e-5
    reduced_terminal: bool = True

    def __post_init__(self):
        for name in ("x0", "x_f"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (3,) or abs(np.linalg.norm(v) - 1.0) > 1e-12:
                raise ValueError(f"{name} must be a unit 3-vector, got {tuple(v)}")
        if not self.r > 0:
            raise ValueError("r must be positive")
        if not self.w_d > 0:
            raise ValueError("w_d must be positive")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.N < 1 or not self.dt > 0 or not self.h > 0:
            raise ValueError("N, dt and h must be positive")

    @property
    def n_nu(self):
        return 2 if self.reduced_terminal else 3

    @property
    def m(self):
        return 3 * self.N + self.n_nu + 1

    @property
    def grid(self):
        return HorizonGrid.normalized(self.N)


def _dtype_of(u):
    return np.result_type(np.asarray(u).dtype, float)


def a_matrix(u):
    cu, su = np.cos(u), np.sin(u)
    return np.array([[0, 0, cu], [0, 0, su], [-cu, -su, 0]], dtype=_dtype_of(u))


def a_prime(u):
    cu, su = np.cos(u), np.sin(u)
    return np.array([[0, 0, -su], [0, 0, cu], [su, -cu, 0]], dtype=_dtype_of(u))


def plant_step(x, u, dt):
    """Exact flow ``exp(dt A(u)) x``: a rotation by ``dt`` about ``w(u)``."""
    K = a_matrix(u)
    x = np.asarray(x, dtype=float)
    return x + np.sin(dt) * (K @ x) + (1.0 - np.cos(dt)) * (K @ (K @ x))


@dataclass(frozen=True)
class Layout:
    N: int
    n_nu: int = 2

    @property
    def m(self):
        return 3 * self.N + self.n_nu + 1

    def split(self, U):
        U = np.asarray(U, dtype=float)
        if U.shape != (self.m,):
            raise ValueError(f"decision vector has shape {U.shape}, expected ({self.m},)")
        N = self.N
        return U[:N], U[N : 2 * N], U[2 * N : 3 * N], U[3 * N : 3 * N + self.n_nu], U[-1]

    def join(self, u, ud, mu, nu, p):
        return np.concatenate([u, ud, mu, np.atleast_1d(nu), [p]]).astype(float)

    def to_generic(self, U):
        """Reorder into the generic ``[u_i = (u, u_d) ..., mu, nu, p]`` layout."""
        u, ud, mu, nu, p = self.split(U)
        return np.concatenate([np.column_stack([u, ud]).ravel(), mu, nu, [p]])

    def from_generic(self, V):
        N = self.N
        uu = np.asarray(V[: 2 * N]).reshape(N, 2)
        return self.join(uu[:, 0], uu[:, 1], V[2 * N : 3 * N], V[3 * N : 3 * N + self.n_nu], V[-1])


def _clamp_p(p, dtype=float):
    return max(np.asarray(p, dtype=dtype)[()], dtype(P_MIN))


def lift_nu(nu, dtype=float):
    """Embed the terminal multiplier into R^3 (z entry zero when reduced)."""
    out = np.zeros(3, dtype=dtype)
    out[: len(nu)] = nu
    return out


def _fit_problem(beta, N, analytic_hessian=True):
    """ProblemDef used for the state fit alone: U = [u_0..u_{N-1}, p]."""
    grid = HorizonGrid.normalized(N)

    def hessian(traj, U):
        return sphere_hessian(traj, U[:N], U[N], beta, grid)

    def f(tau, x, u, p):
        return _clamp_p(p[0]) * (a_matrix(u[0]) @ x)

    def fx(tau, x, u, p):
        return _clamp_p(p[0]) * a_matrix(u[0])

    return ProblemDef(
        n_x=3,
        n_u=1,
        n_p=1,
        n_g=1,
        f=f,
        fx=fx,
        g=lambda tau, x, u, p: np.array([x @ x - 1.0]),
        gx=lambda tau, x, u, p: 2.0 * x[None, :],
        alpha=1.0,
        beta=beta,
        residual_scaling="increment",
        stationarity_jacobian=hessian if analytic_hessian else None,
    )


def sphere_state_fit(x0, u, p, beta, grid, cfg=FIT_CONFIG, warm=None, analytic_hessian=True):
    """Least-squares predicted trajectory, shape (N+1, 3).

    With ``analytic_hessian`` the damped steps use the exact Hessian
    ``Bt'Bt + 2 beta^2 D`` (Newton), otherwise Gauss-Newton.
    """
    u = np.asarray(u, dtype=float)
    problem = _fit_problem(beta, grid.N, analytic_hessian)
    return state_fit(np.asarray(x0, dtype=float), np.concatenate([u, [p]]), problem, grid, cfg, warm=warm)


def _step(u, p, grid, dtype):
    return dtype(grid.dtau) * _clamp_p(p, dtype) * a_matrix(np.asarray(u, dtype=dtype))


def euler_system(u, p, grid, dtype=float):
    """Block bidiagonal ``Bt`` with I on the diagonal and ``-(I + dtau p A(u_i))`` below."""
    N = grid.N
    Bt = np.eye(3 * N, dtype=dtype)
    for i in range(1, N):
        Bt[3 * i : 3 * i + 3, 3 * (i - 1) : 3 * i] = -(np.eye(3, dtype=dtype) + _step(u[i], p, grid, dtype))
    return Bt


def _d_blocks(traj, dtype=float):
    traj = np.asarray(traj, dtype=dtype)
    N = len(traj) - 1
    D = np.zeros((3 * N, 3 * N), dtype=dtype)
    for i in range(1, N + 1):
        x = traj[i]
        D[3 * (i - 1) : 3 * i, 3 * (i - 1) : 3 * i] = (x @ x - 1) * np.eye(3, dtype=dtype) + 2 * np.outer(x, x)
    return D


def sphere_stationarity(traj, u, p, beta, grid, dtype=float):
    """Closed-form stationarity system ``S(x, u, p)`` of the state fit."""
    traj = np.asarray(traj, dtype=dtype)
    Bt = euler_system(u, p, grid, dtype)
    z = traj[1:].ravel()
    radial = np.repeat([xi @ xi - 1 for xi in traj[1:]], 3)
    S = Bt.T @ (Bt @ z) + 2 * dtype(beta) ** 2 * radial * z
    S[:3] -= (np.eye(3, dtype=dtype) + _step(u[0], p, grid, dtype)) @ traj[0]
    return S


def sphere_hessian(traj, u, p, beta, grid, dtype=float):
    """``Bt'Bt + 2 beta^2 D``, the x-Jacobian of :func:`sphere_stationarity`."""
    Bt = euler_system(u, p, grid, dtype)
    return Bt.T @ Bt + 2 * dtype(beta) ** 2 * _d_blocks(traj, dtype)


def _refined_solve(H, rhs, sweeps=2):
    """Solve in double, then correct with residuals taken in ``H.dtype``."""
    lu = dense_factor(H.astype(float))
    x = lu.solve(rhs.astype(float)).astype(H.dtype)
    for _ in range(sweeps):
        x += lu.solve((rhs - H @ x).astype(float))
    return x


def _polish(traj, u, p, beta, grid, steps=2):
    """Newton steps on ``S = 0`` in extended precision, from a converged fit."""
    traj = np.asarray(traj, dtype=EXT).copy()
    for _ in range(steps):
        S = sphere_stationarity(traj, u, p, beta, grid, EXT)
        H = sphere_hessian(traj, u, p, beta, grid, EXT)
        traj[1:] -= _refined_solve(H, S, sweeps=0).reshape(-1, 3)
    return traj


def _costate(traj, nu, u, p, beta, grid, dtype=float):
    N = grid.N
    rhs = np.zeros(3 * N, dtype=dtype)
    rhs[-3:] = -lift_nu(np.asarray(nu, dtype=dtype), dtype)
    try:
        lam = _refined_solve(sphere_hessian(traj, u, p, beta, grid, dtype), rhs)
    except SingularMatrixError as exc:
        raise SingularMatrixError(f"sphere costate system is singular: {exc}") from exc
    return lam.reshape(N, 3)


def sphere_costate(traj, nu, u, p, beta, grid):
    """Costates from ``(Bt'Bt + 2 beta^2 D) lam = [0; ...; 0; -nu]``."""
    return _costate(traj, nu, u, p, beta, grid, EXT).astype(float)


def sphere_cost(U, grid, w_d, n_nu=2):
    _, ud, _, _, p = Layout(grid.N, n_nu).split(U)
    return p * (1.0 - grid.dtau * w_d * np.sum(ud))


def _rows(U, x0, params, traj, lam, dtype=float):
    """Explicit F rows given fitted states and costates (evaluated in ``dtype``)."""
    grid = params.grid
    N = grid.N
    dtau = dtype(grid.dtau)
    lay = Layout(N, params.n_nu)
    u, ud, mu, nu, p = (np.asarray(v, dtype=dtype) for v in lay.split(U))
    p = _clamp_p(p, dtype)
    traj = np.asarray(traj, dtype=dtype)
    lam = np.asarray(lam, dtype=dtype)
    Bt = euler_system(u, p, grid, dtype)
    z = traj[1:].ravel()
    eta = (Bt @ lam.ravel()).reshape(N, 3)
    # defects e_{k+1} = x_{k+1} - x_k - dtau p A(u_k) x_k
    defect = Bt @ z
    defect[:3] -= (np.eye(3, dtype=dtype) + _step(u[0], p, grid, dtype)) @ traj[0]
    defect = defect.reshape(N, 3)

    c, r, w_d = dtype(params.c), dtype(params.r), dtype(params.w_d)
    F_u = np.empty(N, dtype=dtype)
    F_p = 1 - dtau * w_d * np.sum(ud)
    for k in range(N):
        Ap, A = a_prime(u[k]), a_matrix(u[k])
        F_u[k] = 2 * mu[k] * (u[k] - c) - dtau * p * eta[k] @ (Ap @ traj[k])
        F_p -= dtau * eta[k] @ (A @ traj[k])
        if k >= 1:
            F_u[k] -= dtau * p * (Ap @ lam[k - 1]) @ defect[k]
            F_p -= dtau * (A @ lam[k - 1]) @ defect[k]
    F_ud = 2 * mu * ud - dtau * p * w_d
    F_mu = (u - c) ** 2 + ud**2 - r**2
    F_nu = (traj[N] - np.asarray(params.x_f, dtype=dtype))[: params.n_nu]
    return np.concatenate([F_u, F_ud, F_mu, F_nu, [F_p]]).astype(float)


def sphere_F(U, x0, t, params, fit_cfg=FIT_CONFIG, warm=None, return_parts=False):
    """KKT residual of the benchmark from the explicit row formulas."""
    grid = params.grid
    u, _, _, nu, p = Layout(grid.N, params.n_nu).split(U)
    fitted = sphere_state_fit(x0, u, p, params.beta, grid, fit_cfg, warm)
    traj = _polish(fitted, u, p, params.beta, grid)
    lam = _costate(traj, nu, u, p, params.beta, grid, EXT)
    F = _rows(U, x0, params, traj, lam, EXT)
    if return_parts:
        return F, traj.astype(float), lam.astype(float)
    return F


def sphere_lagrangian(U, traj, lam, params):
    """Discrete Lagrangian with states and costates held fixed."""
    grid = params.grid
    u, ud, mu, nu, p = Layout(grid.N, params.n_nu).split(U)
    val = sphere_cost(U, grid, params.w_d, params.n_nu)
    val += np.ravel(lam) @ sphere_stationarity(traj, u, p, params.beta, grid)
    val += mu @ ((u - params.c) ** 2 + ud**2 - params.r**2)
    val += nu @ (traj[-1] - np.asarray(params.x_f))[: params.n_nu]
    return val


def sphere_problem(params, analytic_hessian=False):
    """The benchmark as a generic :class:`ProblemDef`.

    Per-node control is ``(u, u_d)``. The slack-circle constraint is divided
    by ``dtau`` so that the generic ``C dtau`` rows reproduce it unscaled.
    """
    grid = params.grid
    c, r, w_d, dtau = params.c, params.r, params.w_d, grid.dtau
    x_f = np.asarray(params.x_f, dtype=float)
    n_nu = params.n_nu
    fit = _fit_problem(params.beta, grid.N)

    def hessian(traj, U):
        lay = Layout(grid.N, n_nu)
        u, _, _, _, p = lay.split(lay.from_generic(U))
        return sphere_hessian(traj, u, p, params.beta, grid)

    return ProblemDef(
        n_x=3,
        n_u=2,
        n_g=1,
        n_c=1,
        n_psi=n_nu,
        n_p=1,
        f=fit.f,
        fx=fit.fx,
        g=fit.g,
        gx=fit.gx,
        C=lambda tau, x, u, p: np.array([((u[0] - c) ** 2 + u[1] ** 2 - r**2) / dtau]),
        psi=lambda x, p: (x - x_f)[:n_nu],
        L=lambda tau, x, u, p: -p[0] * w_d * u[1],
        phi=lambda x, p: p[0],
        alpha=1.0,
        beta=params.beta,
        residual_scaling="increment",
        stationarity_jacobian=hessian if analytic_hessian else None,
    )


def geodesic_angle(a, b):
    return float(np.arccos(np.clip(np.dot(a, b), -1.0, 1.0)))


def seed_guess(params, x0=None, mu0=0.01):
    """Initial decision vector: centred control, slack on the circle."""
    x0 = np.asarray(params.x0 if x0 is None else x0, dtype=float)
    N = params.N
    return Layout(N, params.n_nu).join(
        np.full(N, params.c),
        np.full(N, params.r),
        np.full(N, mu0),
        np.zeros(params.n_nu),
        geodesic_angle(x0, params.x_f),
    )


@dataclass
class SphereModel:
    """Residual callable ``F(U, x, t)`` for the benchmark with a warm-start cache."""

    params: SphereParams = field(default_factory=SphereParams)
    fit_cfg: NlsqConfig = FIT_CONFIG
    _warm: np.ndarray = field(default=None, repr=False)

    @property
    def dim(self):
        return self.params.m

    def __call__(self, U, x, t=0.0):
        F, traj, _ = sphere_F(U, x, t, self.params, self.fit_cfg, warm=self._warm, return_parts=True)
        self._warm = traj
        return F

    def first_control(self, U):
        return float(U[0])

    def time_to_go(self, U):
        return float(U[-1])

    def with_params(self, **changes):
        return SphereModel(replace(self.params, **changes), self.fit_cfg)


def stop_predicate(params, tol=1e-3):
    """Stop once the time to go is used up or the state is within ``tol`` of ``x_f``."""
    x_f = np.asarray(params.x_f, dtype=float)

    def stop(t, x, U):
        return U[-1] <= params.dt or np.linalg.norm(np.asarray(x) - x_f) <= tol

    return stop


def random_feasible_point(params, rng, p_range=(0.5, 1.5)):
    """Random decision vector on the slack circle with a positive horizon."""
    N, c, r = params.N, params.c, params.r
    u = rng.uniform(c - r, c + r, N)
    ud = np.sqrt(np.maximum(r**2 - (u - c) ** 2, 0.0)) * rng.choice([-1.0, 1.0], N)
    mu = rng.uniform(-0.1, 0.1, N)
    nu = rng.uniform(-0.5, 0.5, params.n_nu)
    return Layout(N, params.n_nu).join(u, ud, mu, nu, rng.uniform(*p_range))
