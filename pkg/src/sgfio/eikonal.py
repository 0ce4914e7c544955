"""Eikonal solver: d_t phi = a(t, x, phi'_x), phi(s, s, x, xi) = x*xi.

Solved by Hamiltonian characteristics with damped-Newton shooting at
every grid node.  The characteristic system for fixed xi and initial
point y is

    dq/dth = -a'_xi(th, q, p),   q(s) = y,
    dp/dth =  a'_x (th, q, p),   p(s) = xi,

integrated with classical fixed-step RK4; the shooting derivative
dq(t)/dy comes from the variational equations integrated alongside, and
the phase value accumulates the action integrand a - p * a'_xi as an
extra ODE component.  All grid nodes advance together as numpy arrays.
"""

from __future__ import annotations

import numpy as np

from .phase import GridPhase
from .symbols import SampleGrid, SgSymbol


class ShootingError(Exception):
    """Shooting did not converge; t - s is too large for this symbol."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class EikonalPhase(GridPhase):
    """Solved phase for one (t, s) pair, with shooting diagnostics."""

    def __init__(self, grid, phi, phi_x, phi_xi, symbol, t, s,
                 shoot_residual=0.0, newton_iters=0):
        super().__init__(grid, phi, phi_x, phi_xi,
                         meta={"kind": "eikonal", "t": t, "s": s,
                               "symbol": symbol.name})
        self.symbol = symbol
        self.t = float(t)
        self.s = float(s)
        self.shoot_residual = float(shoot_residual)
        self.newton_iters = int(newton_iters)


def _rk4_flight(a: SgSymbol, y, xi, s, t, h):
    """Integrate (q, p, dq/dy, dp/dy, action) from s to t; returns arrays."""
    span = t - s
    n_steps = max(1, int(np.ceil(abs(span) / h - 1e-12)))
    dt = span / n_steps

    q = y.astype(float).copy()
    p = xi.astype(float).copy()
    u = np.ones_like(q)
    v = np.zeros_like(q)
    act = np.zeros_like(q)

    def rhs(th, q, p, u, v):
        a_x = a.deriv(q, p, dx=1, t=th)
        a_xi = a.deriv(q, p, dxi=1, t=th)
        a_xx = a.deriv(q, p, dx=2, t=th)
        a_xxi = a.deriv(q, p, dx=1, dxi=1, t=th)
        a_xixi = a.deriv(q, p, dxi=2, t=th)
        dq = -a_xi
        dp = a_x
        du = -a_xxi * u - a_xixi * v
        dv = a_xx * u + a_xxi * v
        da = a.eval(q, p, t=th) - p * a_xi
        return dq, dp, du, dv, da

    th = s
    for _ in range(n_steps):
        k1 = rhs(th, q, p, u, v)
        k2 = rhs(th + dt / 2, q + dt / 2 * k1[0], p + dt / 2 * k1[1],
                 u + dt / 2 * k1[2], v + dt / 2 * k1[3])
        k3 = rhs(th + dt / 2, q + dt / 2 * k2[0], p + dt / 2 * k2[1],
                 u + dt / 2 * k2[2], v + dt / 2 * k2[3])
        k4 = rhs(th + dt, q + dt * k3[0], p + dt * k3[1],
                 u + dt * k3[2], v + dt * k3[3])
        q = q + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        p = p + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        u = u + dt / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        v = v + dt / 6 * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3])
        act = act + dt / 6 * (k1[4] + 2 * k2[4] + 2 * k3[4] + k4[4])
        th += dt
    return q, p, u, v, act


def characteristics(a: SgSymbol, y, xi, s, t, h=1e-3):
    """Terminal (q, p) of the characteristic flow started at (y, xi)."""
    y = np.atleast_1d(np.asarray(y, float))
    xi = np.atleast_1d(np.asarray(xi, float))
    q, p, _, _, _ = _rk4_flight(a, y, xi, s, t, h)
    return q, p


def solve_eikonal(a: SgSymbol, t, s, grid: SampleGrid, h=1e-3, tol=1e-10,
                  max_iter=25):
    """Solve the eikonal problem on the grid for one (t, s) pair.

    For each node (x, xi) the initial point y is found by damped Newton so
    the characteristic lands on x at time t; then phi'_xi = y, phi'_x is
    the terminal momentum, and phi = y*xi + action.
    """
    X, XI = grid.meshes()
    if t == s:
        return EikonalPhase(grid, X * XI, XI.copy(), X.copy(), a, t, s)

    x_flat = X.ravel()
    xi_flat = XI.ravel()
    # first-order transport prediction as the starting guess
    y = x_flat + (t - s) * a.deriv(x_flat, xi_flat, dxi=1, t=s)

    def residual_size(res):
        # NaN (blown-up characteristics) counts as non-convergence
        out = np.max(np.abs(res))
        return out if np.isfinite(out) else np.inf

    def worst_node(res):
        bad = np.nan_to_num(np.abs(res), nan=np.inf)
        worst = int(np.argmax(bad))
        return (float(x_flat[worst]), float(xi_flat[worst]))

    with np.errstate(all="ignore"):
        q, p, u, v, act = _rk4_flight(a, y, xi_flat, s, t, h)
        res = q - x_flat
        iters = 0
        while residual_size(res) > tol:
            if iters >= max_iter:
                raise ShootingError(
                    f"shooting stalled after {max_iter} iterations; "
                    f"|residual| = {residual_size(res):.3e}; reduce t - s",
                    node=worst_node(res))
            slope = np.where(np.abs(u) < 1e-14, np.sign(u) + (u == 0), u)
            step = np.nan_to_num(-res / slope, nan=0.0,
                                 posinf=0.0, neginf=0.0)
            lam = 1.0
            best = residual_size(res)
            for _ in range(6):
                y_try = y + lam * step
                q, p, u, v, act = _rk4_flight(a, y_try, xi_flat, s, t, h)
                new = residual_size(q - x_flat)
                if new < best:
                    break
                lam *= 0.5
            else:
                raise ShootingError(
                    "damped Newton cannot reduce the shooting residual; "
                    "reduce t - s",
                    node=worst_node(q - x_flat))
            y = y_try
            res = q - x_flat
            iters += 1

    if not np.all(np.isfinite(q)):
        raise ShootingError("characteristics left the finite range",
                            node=worst_node(q))

    shape = X.shape
    phi = (y * xi_flat + act).reshape(shape)
    phi_x = p.reshape(shape)
    phi_xi = y.reshape(shape)
    return EikonalPhase(grid, phi, phi_x, phi_xi, a, t, s,
                        shoot_residual=np.max(np.abs(res)),
                        newton_iters=iters)


def verify_forward(a, t, s, grid, h=1e-3, tol=1e-10, delta=1e-3):
    """Sup of |d_t phi - a(t, x, phi'_x)| with d_t by centered difference."""
    hi = solve_eikonal(a, t + delta, s, grid, h, tol)
    lo = solve_eikonal(a, t - delta, s, grid, h, tol)
    mid = solve_eikonal(a, t, s, grid, h, tol)
    X, XI = grid.meshes()
    dphi_dt = (hi.phi - lo.phi) / (2 * delta)
    target = a.eval(X, mid.phi_x, t=t)
    return float(np.max(np.abs(dphi_dt - target)))


def verify_backward(a, t, s, grid, h=1e-3, tol=1e-10, delta=1e-3):
    """Sup of |d_s phi + a(s, phi'_xi, xi)|, the backward equation."""
    hi = solve_eikonal(a, t, s + delta, grid, h, tol)
    lo = solve_eikonal(a, t, s - delta, grid, h, tol)
    mid = solve_eikonal(a, t, s, grid, h, tol)
    X, XI = grid.meshes()
    dphi_ds = (hi.phi - lo.phi) / (2 * delta)
    return float(np.max(np.abs(dphi_ds + a.eval(mid.phi_xi, XI, t=s))))
