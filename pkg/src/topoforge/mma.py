"""Method of moving asymptotes for bound-constrained nonlinear programs.

One `mma_step` builds the separable convex approximation of the objective
and constraints around the current iterate and solves it with a primal-dual
interior-point method on the dual side.  Asymptotes start at half the box
range and adapt per component by 1.2 / 0.7 depending on whether the last
two moves agree in sign.

The objective approximation is curvature-fitted: a diagonal secant estimate
from the previous gradient is folded into the p/q regularization so the
approximation's second derivative at the expansion point matches it.  Plain
asymptote adaptation alone contracts only linearly, which is far too slow
for tight tolerances; the secant fit restores Newton-like local steps while
the asymptotes and move limit keep the global safeguards.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

_ASY_INIT = 0.5
_ASY_INCR = 1.2
_ASY_DECR = 0.7
_ASY_MIN = 0.01  # times the box range
_ASY_MAX = 10.0
_ALBEFA = 0.1
_RAA0 = 1e-5
_CONSTRAINT_PENALTY = 1e4


@dataclass
class MmaProblem:
    """One linearization point: value/gradient of the objective and of the
    constraints in g(x) <= 0 form (g has shape (m,), dg has shape (m, n))."""

    x: np.ndarray
    x_min: np.ndarray
    x_max: np.ndarray
    f0: float
    df0: np.ndarray
    g: np.ndarray
    dg: np.ndarray

    def __post_init__(self) -> None:
        self.x = np.asarray(self.x, dtype=float)
        self.x_min = np.asarray(self.x_min, dtype=float)
        self.x_max = np.asarray(self.x_max, dtype=float)
        self.df0 = np.asarray(self.df0, dtype=float)
        self.g = np.atleast_1d(np.asarray(self.g, dtype=float))
        self.dg = np.asarray(self.dg, dtype=float).reshape(self.g.size, self.x.size)
        if not (self.x.shape == self.x_min.shape == self.x_max.shape == self.df0.shape):
            raise ValueError("x, bounds and objective gradient must share a shape")
        if np.any(self.x < self.x_min - 1e-12) or np.any(self.x > self.x_max + 1e-12):
            raise ValueError("x must lie within its bounds")


@dataclass
class MmaState:
    """Asymptotes, the two previous iterates and the move-limit setting."""

    low: np.ndarray
    upp: np.ndarray
    x_prev1: np.ndarray
    x_prev2: np.ndarray
    move_limit: float = 0.2
    kkt_tol: float = 1e-9
    iteration: int = 0
    df0_prev: np.ndarray | None = None

    @classmethod
    def fresh(cls, n: int, move_limit: float = 0.2, kkt_tol: float = 1e-9) -> "MmaState":
        z = np.zeros(n)
        return cls(z.copy(), z.copy(), z.copy(), z.copy(), move_limit, kkt_tol, 0)


def mma_step(problem: MmaProblem, state: MmaState) -> tuple[np.ndarray, MmaState]:
    """One MMA update; returns the new iterate and the advanced state."""
    if not np.all(np.isfinite(problem.df0)) or not np.all(np.isfinite(problem.dg)):
        raise ValueError("MMA received non-finite gradients")
    for i in range(problem.g.size):
        if problem.g[i] > 0 and not np.any(problem.dg[i]):
            raise ValueError(
                f"constraint {i} is violated but has an all-zero gradient; subproblem infeasible"
            )

    x, x_min, x_max = problem.x, problem.x_min, problem.x_max
    n = x.size
    rng = x_max - x_min
    it = state.iteration + 1

    if it <= 2:
        low = x - _ASY_INIT * rng
        upp = x + _ASY_INIT * rng
    else:
        osc = (x - state.x_prev1) * (state.x_prev1 - state.x_prev2)
        factor = np.ones(n)
        factor[osc > 0] = _ASY_INCR
        factor[osc < 0] = _ASY_DECR
        low = x - factor * (state.x_prev1 - state.low)
        upp = x + factor * (state.upp - state.x_prev1)
        low = np.clip(low, x - _ASY_MAX * rng, x - _ASY_MIN * rng)
        upp = np.clip(upp, x + _ASY_MIN * rng, x + _ASY_MAX * rng)

    move = state.move_limit * rng
    alfa = np.maximum.reduce([x_min, low + _ALBEFA * (x - low), x - move])
    beta = np.minimum.reduce([x_max, upp - _ALBEFA * (upp - x), x + move])

    # Collapsed boxes (frozen variables) would give zero asymptote gaps;
    # they are pinned below, so give them harmless unit gaps here.
    free = rng > 1e-12
    ux1 = np.where(free, upp - x, 1.0)
    xl1 = np.where(free, x - low, 1.0)
    xmami = np.maximum(rng, 1e-5)
    df0p = np.maximum(problem.df0, 0.0)
    df0m = np.maximum(-problem.df0, 0.0)
    # Diagonal secant curvature of the objective; components that barely
    # moved carry no usable secant and fall back to the plain heuristic.
    curvature = np.zeros(n)
    if state.df0_prev is not None and it >= 2:
        dx = x - state.x_prev1
        reliable = np.abs(dx) >= 1e-8 * xmami
        curvature[reliable] = np.abs(problem.df0 - state.df0_prev)[reliable] / np.abs(dx[reliable])
    present = 2.0 * df0p / ux1 + 2.0 * df0m / xl1
    fitted = (curvature - present) * ux1 * xl1 / (2.0 * (ux1 + xl1))
    reg0 = np.maximum(fitted, 0.001 * (df0p + df0m) + _RAA0 / xmami)
    p0 = (df0p + reg0) * ux1**2
    q0 = (df0m + reg0) * xl1**2

    m = problem.g.size
    if m == 0:
        g = np.array([-1.0])
        dg = np.zeros((1, n))
    else:
        g = problem.g
        dg = problem.dg
    dgp = np.maximum(dg, 0.0)
    dgm = np.maximum(-dg, 0.0)
    reg = 0.001 * (dgp + dgm) + _RAA0 / xmami[None, :]
    P = (dgp + reg) * ux1[None, :] ** 2
    Q = (dgm + reg) * xl1[None, :] ** 2

    # Variables with a collapsed box (frozen design variables) are excluded
    # from the subproblem and pinned to their bound.
    x_new = x_min.copy()
    if np.any(free):
        b = P[:, free] @ (1.0 / ux1[free]) + Q[:, free] @ (1.0 / xl1[free]) - g
        x_new[free] = _solve_subproblem(
            low[free],
            upp[free],
            alfa[free],
            beta[free],
            p0[free],
            q0[free],
            P[:, free],
            Q[:, free],
            b,
            state.kkt_tol,
        )

    new_state = replace(
        state,
        low=low,
        upp=upp,
        x_prev1=x.copy(),
        x_prev2=state.x_prev1.copy(),
        iteration=it,
        df0_prev=problem.df0.copy(),
    )
    return x_new, new_state


def _solve_subproblem(low, upp, alfa, beta, p0, q0, P, Q, b, kkt_tol):
    """Primal-dual interior-point solve of the separable MMA subproblem.

    The barrier parameter epsi decreases tenfold from 1 until it passes
    kkt_tol; the inner Newton loop runs until the residual drops below
    0.9 * epsi, so the returned point satisfies the subproblem KKT system
    to below kkt_tol.
    """
    m, n = P.shape
    a0 = 1.0
    a_lin = np.zeros(m)
    c_lin = np.full(m, _CONSTRAINT_PENALTY)
    d_lin = np.ones(m)

    xk = 0.5 * (alfa + beta)
    y = np.ones(m)
    z = 1.0
    lam = np.ones(m)
    xsi = np.maximum(1.0 / (xk - alfa), 1.0)
    eta = np.maximum(1.0 / (beta - xk), 1.0)
    mu = np.maximum(0.5 * c_lin, 1.0)
    zet = 1.0
    s = np.ones(m)

    def residuals(xk, y, z, lam, xsi, eta, mu, zet, s, epsi):
        ux = upp - xk
        xl = xk - low
        plam = p0 + P.T @ lam
        qlam = q0 + Q.T @ lam
        gvec = P @ (1.0 / ux) + Q @ (1.0 / xl)
        res = np.concatenate(
            [
                plam / ux**2 - qlam / xl**2 - xsi + eta,
                c_lin + d_lin * y - mu - lam,
                [a0 - zet - a_lin @ lam],
                gvec - a_lin * z - y + s - b,
                xsi * (xk - alfa) - epsi,
                eta * (beta - xk) - epsi,
                mu * y - epsi,
                [zet * z - epsi],
                lam * s - epsi,
            ]
        )
        return res

    epsi = 1.0
    while epsi > 0.9 * kkt_tol:
        res = residuals(xk, y, z, lam, xsi, eta, mu, zet, s, epsi)
        resnorm = np.linalg.norm(res)
        resmax = np.abs(res).max()
        inner = 0
        while resmax > 0.9 * epsi and inner < 200:
            inner += 1
            ux = upp - xk
            xl = xk - low
            plam = p0 + P.T @ lam
            qlam = q0 + Q.T @ lam
            gvec = P @ (1.0 / ux) + Q @ (1.0 / xl)
            GG = P / ux[None, :] ** 2 - Q / xl[None, :] ** 2

            delx = plam / ux**2 - qlam / xl**2 - epsi / (xk - alfa) + epsi / (beta - xk)
            dely = c_lin + d_lin * y - lam - epsi / y
            delz = a0 - a_lin @ lam - epsi / z
            dellam = gvec - a_lin * z - y - b + epsi / lam

            diagx = 2.0 * (plam / ux**3 + qlam / xl**3) + xsi / (xk - alfa) + eta / (beta - xk)
            diagy = d_lin + mu / y
            diaglamyi = s / lam + 1.0 / diagy

            # Reduce to the (m+1)-dimensional (lam, z) system.
            blam = dellam + dely / diagy - GG @ (delx / diagx)
            A = np.diag(diaglamyi) + (GG / diagx[None, :]) @ GG.T
            big = np.empty((m + 1, m + 1))
            big[:m, :m] = A
            big[:m, m] = a_lin
            big[m, :m] = a_lin
            big[m, m] = -zet / z
            sol = np.linalg.solve(big, np.concatenate([blam, [delz]]))
            dlam = sol[:m]
            dz = sol[m]
            dx = -(delx + GG.T @ dlam) / diagx
            dy = (-dely + dlam) / diagy
            dxsi = -xsi + (epsi - xsi * dx) / (xk - alfa)
            deta = -eta + (epsi + eta * dx) / (beta - xk)
            dmu = -mu + (epsi - mu * dy) / y
            dzet = -zet + (epsi - zet * dz) / z
            ds = -s + (epsi - s * dlam) / lam

            pos = np.concatenate([y, [z], lam, xsi, eta, mu, [zet], s])
            dpos = np.concatenate([dy, [dz], dlam, dxsi, deta, dmu, [dzet], ds])
            step = max(
                np.max(-1.01 * dpos / pos),
                np.max(-1.01 * dx / (xk - alfa)),
                np.max(1.01 * dx / (beta - xk)),
                1.0,
            )
            step = 1.0 / step

            old = (xk, y, z, lam, xsi, eta, mu, zet, s)
            for _ in range(50):
                xk = old[0] + step * dx
                y = old[1] + step * dy
                z = old[2] + step * dz
                lam = old[3] + step * dlam
                xsi = old[4] + step * dxsi
                eta = old[5] + step * deta
                mu = old[6] + step * dmu
                zet = old[7] + step * dzet
                s = old[8] + step * ds
                res = residuals(xk, y, z, lam, xsi, eta, mu, zet, s, epsi)
                if np.linalg.norm(res) <= resnorm:
                    break
                step *= 0.5
            resnorm = np.linalg.norm(res)
            resmax = np.abs(res).max()
        epsi *= 0.1
    return xk
