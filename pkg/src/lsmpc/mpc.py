"""Receding-horizon driver: Newton initialization and one Newton-Krylov step per sample.

Everything here works on a residual callable ``F(U, x, t)`` (for example
:class:`lsmpc.kkt.KktFunction` or :class:`lsmpc.sphere.SphereModel`).
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConvergenceError, NonFiniteError
from .krylov import GmresConfig, dense_materialize, dense_solve, gmres_solve
from .kkt import fd_operator

log = logging.getLogger(__name__)

MODES = ("matrix-free", "dense-oracle")


@dataclass(frozen=True)
class MpcConfig:
    h: float = 1e-8
    gmres: GmresConfig = GmresConfig(rel_tol=1e-5, max_iters=100)
    dt: float = 1.0 / 200
    steps: int = 1000
    jacobian_mode: str = "matrix-free"

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("h must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.jacobian_mode not in MODES:
            raise ValueError(f"jacobian_mode must be one of {MODES}")


@dataclass
class StepStats:
    gmres_iterations: int = 0
    gmres_relres: float = 0.0
    gmres_converged: bool = True
    residual_norms: list = field(default_factory=list)
    f_norm_before: float = 0.0
    delta: Optional[np.ndarray] = None


@dataclass
class StepRecord:
    step: int
    t: float
    x: np.ndarray
    u: object
    U: np.ndarray
    gmres_iterations: int
    gmres_relres: float
    gmres_converged: bool
    f_norm: float
    wall_time: float
    f_norm_before: float = float("nan")  # |F(U_prev, x_j, t_j)|_2; nan at step 0


@dataclass
class SimLog:
    records: list = field(default_factory=list)
    final_state: Optional[np.ndarray] = None
    final_time: Optional[float] = None
    stopped: bool = False

    def __len__(self):
        return len(self.records)

    def states(self):
        """States x_0..x_n including the one after the last applied control."""
        xs = [r.x for r in self.records]
        if self.final_state is not None:
            xs.append(self.final_state)
        return np.array(xs)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    @property
    def stagnated_steps(self):
        return [r.step for r in self.records if not r.gmres_converged]


def newton_jacobian(F, U, x, t, h, F_base=None):
    return dense_materialize(fd_operator(F, U, x, t, h, F_base))


def initialize_U0(F, U_guess, x0, t0=0.0, tol=1e-8, max_iters=50, h=1e-8):
    """Damped Newton on ``F(., x0, t0) = 0`` with a dense FD Jacobian.

    Backtracks on ``|F|_2``. Raises :class:`ConvergenceError` carrying the
    best iterate and the residual history if ``|F|_inf <= tol`` is not met.
    """
    U = np.array(U_guess, dtype=float)
    Fu = F(U, x0, t0)
    history = [float(np.linalg.norm(Fu))]
    best = U.copy()
    for _ in range(max_iters):
        if np.max(np.abs(Fu)) <= tol:
            return U
        J = newton_jacobian(F, U, x0, t0, h, Fu)
        d = dense_solve(J, -Fu)
        step = 1.0
        f0 = np.linalg.norm(Fu)
        while True:
            U_try = U + step * d
            try:
                F_try = F(U_try, x0, t0)
                ok = np.all(np.isfinite(F_try)) and np.linalg.norm(F_try) < (1 - 1e-4 * step) * f0
            except (NonFiniteError, np.linalg.LinAlgError):
                ok = False
            if ok:
                break
            step *= 0.5
            if step < 1e-6:
                raise ConvergenceError("line search failed during initialization", best=best, history=history)
        U, Fu = U_try, F_try
        best = U.copy()
        history.append(float(np.linalg.norm(Fu)))
        log.debug("init: |F| = %.3e (step %.3g)", history[-1], step)
    if np.max(np.abs(Fu)) <= tol:
        return U
    raise ConvergenceError(
        f"initialization did not reach |F|_inf <= {tol:g} in {max_iters} Newton steps", best=best, history=history
    )


def receding_step(F, U_prev, x, t, cfg, mode=None):
    """One warm-started Newton-Krylov update ``U = U_prev + h V``.

    ``V`` solves ``a(V) = b / h`` with ``b = -F(U_prev, x, t)`` and ``a`` the
    forward-difference Jacobian action. GMRES starts from zero. A GMRES run
    that misses its tolerance is flagged in the stats and the step is still
    applied.
    """
    mode = mode or cfg.jacobian_mode
    U_prev = np.asarray(U_prev, dtype=float)
    F0 = F(U_prev, x, t)
    if not np.all(np.isfinite(F0)):
        raise NonFiniteError("residual is not finite at the previous decision vector")
    stats = StepStats(f_norm_before=float(np.linalg.norm(F0)))
    b = -F0
    if not np.any(b):
        stats.delta = np.zeros_like(U_prev)
        return U_prev.copy(), stats
    op = fd_operator(F, U_prev, x, t, cfg.h, F0)
    if mode == "dense-oracle":
        V = dense_solve(dense_materialize(op), b / cfg.h)
        stats.gmres_iterations = 0
    else:
        res = gmres_solve(op, b / cfg.h, np.zeros_like(U_prev), cfg.gmres)
        V = res.solution
        stats.gmres_iterations = res.iterations
        stats.gmres_relres = res.final_relres
        stats.gmres_converged = res.converged
        stats.residual_norms = res.residual_norms
        if not res.converged:
            log.warning("GMRES stopped at relative residual %.2e after %d iterations", res.final_relres, res.iterations)
    delta = cfg.h * V
    if not np.all(np.isfinite(delta)):
        raise NonFiniteError("Newton-Krylov update is not finite")
    stats.delta = delta
    return U_prev + delta, stats


def simulate_closed_loop(
    F: Callable,
    U0,
    x0,
    t0,
    cfg: MpcConfig,
    plant: Callable,
    control_of: Callable,
    stop: Optional[Callable] = None,
    on_step: Optional[Callable] = None,
):
    """Closed-loop run: measure, update, apply the first control, advance the plant.

    Step 0 applies ``U0`` as given. ``stop(t_next, x_next, U)`` is checked
    after each plant advance. ``on_step(j, U_prev, x, t)`` is called before
    every update and may be used to run side-by-side checks.
    """
    logbook = SimLog()
    x = np.array(x0, dtype=float)
    t = float(t0)
    U = np.array(U0, dtype=float)
    for j in range(cfg.steps):
        start = time.perf_counter()
        if j == 0:
            stats = StepStats()
        else:
            if on_step is not None:
                on_step(j, U, x, t)
            U, stats = receding_step(F, U, x, t, cfg)
        f_norm = float(np.linalg.norm(F(U, x, t)))
        u = control_of(U)
        logbook.records.append(
            StepRecord(
                step=j,
                t=t,
                x=x.copy(),
                u=u,
                U=U.copy(),
                gmres_iterations=stats.gmres_iterations,
                gmres_relres=stats.gmres_relres,
                gmres_converged=stats.gmres_converged,
                f_norm=f_norm,
                wall_time=time.perf_counter() - start,
                f_norm_before=stats.f_norm_before if j else float("nan"),
            )
        )
        x = np.asarray(plant(x, u, cfg.dt), dtype=float)
        if not np.all(np.isfinite(x)):
            raise NonFiniteError(f"plant returned a non-finite state at step {j}")
        t += cfg.dt
        logbook.final_state = x.copy()
        logbook.final_time = t
        if stop is not None and stop(t, x, U):
            logbook.stopped = True
            break
    return logbook
