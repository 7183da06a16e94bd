"""Independent reference computations shared by the test modules."""

import numpy as np

from lsmpc.sphere import a_matrix


def stationarity_newton(x0, u, p, beta, N, iters=50):
    """Brute-force minimizer of the unscaled fit: plain Newton on its gradient."""
    dtau = 1.0 / N
    steps = [np.eye(3) + dtau * p * a_matrix(ui) for ui in u]
    z = np.tile(x0, N).astype(float)

    def grad_hess(z):
        xs = [x0] + list(z.reshape(N, 3))
        g = np.zeros(3 * N)
        H = np.zeros((3 * N, 3 * N))
        for i in range(1, N + 1):
            e = xs[i] - steps[i - 1] @ xs[i - 1]
            sl = slice(3 * (i - 1), 3 * i)
            g[sl] += e
            H[sl, sl] += np.eye(3)
            if i >= 2:
                pl = slice(3 * (i - 2), 3 * (i - 1))
                g[pl] -= steps[i - 1].T @ e
                H[pl, pl] += steps[i - 1].T @ steps[i - 1]
                H[sl, pl] -= steps[i - 1]
                H[pl, sl] -= steps[i - 1].T
            c = xs[i] @ xs[i] - 1.0
            g[sl] += 2 * beta**2 * c * xs[i]
            H[sl, sl] += 2 * beta**2 * (c * np.eye(3) + 2 * np.outer(xs[i], xs[i]))
        return g, H

    for _ in range(iters):
        g, H = grad_hess(z)
        z = z - np.linalg.solve(H, g)
    return np.vstack([x0, z.reshape(N, 3)])


def euler_recursion(x0, u, p, N):
    """x_{k+1} = x_k + dtau p A(u_k) x_k, written out step by step."""
    dtau = 1.0 / N
    xs = [np.asarray(x0, dtype=float)]
    for k in range(N):
        xs.append(xs[-1] + dtau * p * (a_matrix(u[k]) @ xs[-1]))
    return np.array(xs)


def classical_F(U, x0, params):
    """Optimality rows of the Euler-discretized problem with a backward costate sweep.

    Costates follow lambda_N = nu (z entry zero) and
    lambda_k = (I + dtau p A(u_k))' lambda_{k+1}; this is the textbook
    exact-dynamics form the least-squares pipeline must reduce to at beta = 0.
    """
    N, c, r, w_d = params.N, params.c, params.r, params.w_d
    dtau = 1.0 / N
    u, ud, mu = U[:N], U[N : 2 * N], U[2 * N : 3 * N]
    nu, p = U[3 * N : 3 * N + 2], U[-1]
    x = euler_recursion(x0, u, p, N)
    lam = np.zeros((N + 1, 3))
    lam[N, :2] = nu
    for k in range(N - 1, 0, -1):
        lam[k] = (np.eye(3) + dtau * p * a_matrix(u[k])).T @ lam[k + 1]
    F_u = np.empty(N)
    F_p = 1.0 - dtau * w_d * ud.sum()
    for k in range(N):
        cu, su = np.cos(u[k]), np.sin(u[k])
        dA = np.array([[0, 0, -su], [0, 0, cu], [su, -cu, 0]])
        F_u[k] = 2 * mu[k] * (u[k] - c) + dtau * p * lam[k + 1] @ dA @ x[k]
        F_p += dtau * lam[k + 1] @ a_matrix(u[k]) @ x[k]
    F_ud = 2 * mu * ud - dtau * p * w_d
    F_mu = (u - c) ** 2 + ud**2 - r**2
    F_nu = (x[N] - np.asarray(params.x_f))[:2]
    return np.concatenate([F_u, F_ud, F_mu, F_nu, [F_p]])
