"""Matrix-free GMRES and a dense Gaussian-elimination cross-check.

The GMRES here only ever touches the operator through ``apply``, so it can
run on a forward-difference approximation of a Jacobian without forming it.
``dense_materialize`` + ``dense_solve`` is the direct route used to verify it.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import NonFiniteError, SingularMatrixError

DENSE_CAP = 10_000


@dataclass(frozen=True)
class LinearOperator:
    """Square linear map given only by its action on vectors."""

    dim: int
    apply: Callable[[np.ndarray], np.ndarray]

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"operator dimension must be positive, got {self.dim}")

    def __call__(self, v):
        out = np.asarray(self.apply(np.asarray(v, dtype=float)), dtype=float)
        if out.shape != (self.dim,):
            raise ValueError(f"operator returned shape {out.shape}, expected ({self.dim},)")
        if not np.all(np.isfinite(out)):
            raise NonFiniteError("linear operator produced non-finite values")
        return out

    @classmethod
    def from_matrix(cls, A):
        A = np.asarray(A, dtype=float)
        return cls(A.shape[0], lambda v: A @ v)


@dataclass(frozen=True)
class GmresConfig:
    rel_tol: float = 1e-5
    max_iters: int = 100
    restart: Optional[int] = None

    def __post_init__(self):
        if not 0.0 <= self.rel_tol < 1.0:
            raise ValueError(f"rel_tol must lie in [0, 1), got {self.rel_tol}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.restart is not None and self.restart < 1:
            raise ValueError(f"restart must be positive, got {self.restart}")


@dataclass
class GmresResult:
    solution: np.ndarray
    residual_norms: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    breakdown: bool = False

    @property
    def final_relres(self):
        return self.residual_norms[-1] / self.residual_norms[0] if self.residual_norms[0] > 0 else 0.0


def _givens(a, b):
    if b == 0.0:
        return 1.0, 0.0
    rho = np.hypot(a, b)
    return a / rho, b / rho


def gmres_solve(op, rhs, x0=None, cfg=GmresConfig()):
    """Solve ``op(x) = rhs`` by GMRES with Arnoldi + Givens rotations.

    ``residual_norms`` holds the (Givens-estimated) residual norm after every
    iteration, starting with the initial residual. Convergence is measured
    relative to ``||rhs||``.
    """
    n = op.dim
    rhs = np.asarray(rhs, dtype=float)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if rhs.shape != (n,) or x.shape != (n,):
        raise ValueError("rhs and x0 must match the operator dimension")

    bnorm = np.linalg.norm(rhs)
    if bnorm == 0.0:
        # zero rhs: the exact solution of a linear system is 0
        if not np.any(x) or np.linalg.norm(op(x)) == 0.0:
            return GmresResult(x, [0.0], 0, True)
        return GmresResult(np.zeros(n), [0.0], 0, True)

    target = cfg.rel_tol * bnorm
    cycle = cfg.restart or cfg.max_iters
    r = rhs - op(x)
    beta = np.linalg.norm(r)
    norms = [beta]
    total = 0
    breakdown = False

    while beta > target and total < cfg.max_iters and not breakdown:
        k_max = min(cycle, cfg.max_iters - total, n)
        V = np.zeros((k_max + 1, n))
        H = np.zeros((k_max + 1, k_max))
        cs = np.zeros(k_max)
        sn = np.zeros(k_max)
        g = np.zeros(k_max + 1)
        g[0] = beta
        V[0] = r / beta
        k = 0
        for k in range(k_max):
            w = op(V[k])
            for i in range(k + 1):
                H[i, k] = V[i] @ w
                w = w - H[i, k] * V[i]
            # one reorthogonalization pass keeps the basis orthogonal in floating point
            for i in range(k + 1):
                corr = V[i] @ w
                H[i, k] += corr
                w = w - corr * V[i]
            hnext = np.linalg.norm(w)
            H[k + 1, k] = hnext
            happy = hnext <= 1e-14 * np.linalg.norm(H[: k + 2, k])
            for i in range(k):
                tmp = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
                H[i + 1, k] = -sn[i] * H[i, k] + cs[i] * H[i + 1, k]
                H[i, k] = tmp
            cs[k], sn[k] = _givens(H[k, k], H[k + 1, k])
            H[k, k] = cs[k] * H[k, k] + sn[k] * H[k + 1, k]
            H[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            total += 1
            norms.append(abs(g[k + 1]))
            if happy:
                breakdown = True
                break
            if abs(g[k + 1]) <= target:
                break
            V[k + 1] = w / hnext
        kk = k + 1
        if H[kk - 1, kk - 1] == 0.0:
            kk -= 1
        if kk > 0:
            y = np.linalg.solve(np.triu(H[:kk, :kk]), g[:kk])
            x = x + V[:kk].T @ y
        beta = norms[-1]
        if beta > target and total < cfg.max_iters and not breakdown:
            # restart from the true residual
            r = rhs - op(x)
            beta = np.linalg.norm(r)

    converged = norms[-1] <= target
    return GmresResult(x, norms, total, converged, breakdown)


def dense_materialize(op, cap=DENSE_CAP):
    """Matrix whose k-th column is ``op(e_k)``."""
    n = op.dim
    if n > cap:
        raise ValueError(f"operator dimension {n} exceeds dense cap {cap}")
    A = np.empty((n, n))
    e = np.zeros(n)
    for k in range(n):
        e[k] = 1.0
        A[:, k] = op(e)
        e[k] = 0.0
    return A


@dataclass(frozen=True)
class DenseFactor:
    """Row-pivoted LU factors; ``lu`` holds U above and L multipliers below the diagonal."""

    lu: np.ndarray
    perm: np.ndarray

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        n = self.lu.shape[0]
        if b.shape != (n,):
            raise ValueError(f"right-hand side has shape {b.shape}, expected ({n},)")
        y = b[self.perm].copy()
        for k in range(n - 1):
            y[k + 1 :] -= self.lu[k + 1 :, k] * y[k]
        x = np.empty(n)
        for k in range(n - 1, -1, -1):
            x[k] = (y[k] - self.lu[k, k + 1 :] @ x[k + 1 :]) / self.lu[k, k]
        return x


def dense_factor(A, rel_threshold=1e-12):
    """Gaussian elimination with partial pivoting.

    A pivot smaller than ``rel_threshold * max row norm`` raises
    :class:`SingularMatrixError`.
    """
    A = np.array(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"matrix must be square, got {A.shape}")
    perm = np.arange(n)
    scale = np.max(np.linalg.norm(A, axis=1)) if n else 0.0
    threshold = rel_threshold * scale
    for k in range(n):
        piv = k + int(np.argmax(np.abs(A[k:, k])))
        if abs(A[piv, k]) <= threshold or scale == 0.0:
            raise SingularMatrixError(
                f"matrix is numerically singular: pivot {abs(A[piv, k]):.3e} at column {k} "
                f"(threshold {threshold:.3e})"
            )
        if piv != k:
            A[[k, piv]] = A[[piv, k]]
            perm[[k, piv]] = perm[[piv, k]]
        A[k + 1 :, k] /= A[k, k]
        A[k + 1 :, k + 1 :] -= np.outer(A[k + 1 :, k], A[k, k + 1 :])
    return DenseFactor(A, perm)


def dense_solve(A, b, rel_threshold=1e-12):
    """Solve ``A x = b`` by :func:`dense_factor`; singular pivots raise."""
    b = np.asarray(b, dtype=float)
    if np.ndim(A) != 2 or b.shape != (np.shape(A)[0],):
        raise ValueError(f"incompatible shapes {np.shape(A)} and {b.shape}")
    return dense_factor(A, rel_threshold).solve(b)
