"""Phase functions, the perturbation J = phi - x*xi, and class certificates.

A regular phase of parameter tau has |det phi''_{x xi}| >= r and the
weighted J-derivatives up to second order bounded by tau; the seminorms
here follow the single convention in which an x-derivative lowers the
ang(x) exponent and a xi-derivative lowers the ang(xi) exponent, the one
under which J sits in the order-(1,1) class.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np
from scipy.interpolate import RectBivariateSpline

from . import expr as ex
from .symbols import SampleGrid, angle_weight

X_TIMES_XI = ex.Mul(ex.Var("x"), ex.Var("xi"))


class PhaseError(Exception):
    pass


class PhaseFunction:
    """Common interface: phi values, phi derivatives, J derivatives."""

    def value(self, x, xi):
        return self.d(x, xi, 0, 0)

    def d(self, x, xi, dx, dxi):
        raise NotImplementedError

    def j(self, x, xi, dx, dxi):
        """Derivative of J = phi - x*xi of order (dx, dxi)."""
        v = self.d(x, xi, dx, dxi)
        if dx == 0 and dxi == 0:
            return v - np.asarray(x, float) * np.asarray(xi, float)
        if dx == 1 and dxi == 0:
            return v - np.asarray(xi, float)
        if dx == 0 and dxi == 1:
            return v - np.asarray(x, float)
        if dx == 1 and dxi == 1:
            return v - 1.0
        return v


class ExprPhase(PhaseFunction):
    """Phase given by an expression in x and xi (t, s enter as bound reals)."""

    def __init__(self, source, t=0.0, s=0.0, depth_cap=4096):
        self.expr = ex.ensure_expr(source)
        self.t = float(t)
        self.s = float(s)
        self.depth_cap = depth_cap
        self._cache = {(0, 0): self.expr}
        self._jcache = {(0, 0): ex.Sub(self.expr, X_TIMES_XI)}

    def _node(self, cache, dx, dxi):
        key = (dx, dxi)
        if key not in cache:
            if dx > 0:
                base = self._node(cache, dx - 1, dxi)
                cache[key] = ex.differentiate(base, "x", self.depth_cap)
            else:
                base = self._node(cache, dx, dxi - 1)
                cache[key] = ex.differentiate(base, "xi", self.depth_cap)
        return cache[key]

    def _eval(self, node, x, xi):
        env = {"t": self.t, "s": self.s,
               "x": np.asarray(x, float), "xi": np.asarray(xi, float)}
        out = ex.evaluate(node, env)
        shape = np.broadcast_shapes(np.shape(x), np.shape(xi))
        return np.broadcast_to(np.asarray(out, float), shape).copy()

    def d(self, x, xi, dx, dxi):
        return self._eval(self._node(self._cache, dx, dxi), x, xi)

    def j(self, x, xi, dx, dxi):
        # symbolic J keeps trivial phases bit-exact (x*xi gives literal zeros)
        return self._eval(self._node(self._jcache, dx, dxi), x, xi)


IDENTITY_PHASE = ExprPhase("x*xi")


class GridPhase(PhaseFunction):
    """Phase known numerically: values and first derivatives on a grid.

    Off-grid queries use separable cubic interpolation; derivatives beyond
    the stored first-order grids differentiate the first-derivative
    splines, so order (2+k) queries cost one spline derivative of order
    (1+k).
    """

    def __init__(self, grid: SampleGrid, phi, phi_x, phi_xi, meta=None):
        self.grid = grid
        self.phi = np.asarray(phi, float)
        self.phi_x = np.asarray(phi_x, float)
        self.phi_xi = np.asarray(phi_xi, float)
        expected = (grid.nx, grid.nxi)
        for arr in (self.phi, self.phi_x, self.phi_xi):
            if arr.shape != expected:
                raise PhaseError(f"grid arrays must have shape {expected}")
        self.meta = dict(meta or {})
        self._sp_phi = RectBivariateSpline(grid.x, grid.xi, self.phi)
        self._sp_phix = RectBivariateSpline(grid.x, grid.xi, self.phi_x)
        self._sp_phixi = RectBivariateSpline(grid.x, grid.xi, self.phi_xi)

    def _ev(self, spline, x, xi, dx, dxi):
        x = np.asarray(x, float)
        xi = np.asarray(xi, float)
        shape = np.broadcast_shapes(x.shape, xi.shape)
        xb = np.broadcast_to(x, shape).ravel()
        xib = np.broadcast_to(xi, shape).ravel()
        return spline.ev(xb, xib, dx=dx, dy=dxi).reshape(shape)

    def d(self, x, xi, dx, dxi):
        if dx == 0 and dxi == 0:
            return self._ev(self._sp_phi, x, xi, 0, 0)
        if dx >= 1:
            if dx - 1 > 3 or dxi > 3:
                raise PhaseError(f"derivative order ({dx},{dxi}) beyond cubic"
                                 " spline differentiability")
            return self._ev(self._sp_phix, x, xi, dx - 1, dxi)
        if dxi - 1 > 3:
            raise PhaseError(f"derivative order ({dx},{dxi}) beyond cubic"
                             " spline differentiability")
        return self._ev(self._sp_phixi, x, xi, 0, dxi - 1)


# ---------------------------------------------------------------------------
# J seminorms and certification


def _j_weighted_sup(phi, grid, dx, dxi, X, XI, wx, wxi):
    vals = np.abs(phi.j(X, XI, dx, dxi))
    return float(np.max(vals * wx ** (dx - 1) * wxi ** (dxi - 1)))


def j_seminorm(phi, ell, grid):
    """Grid values of (||J||_{2,ell}, ||J||_ell).

    ||J||_{2,ell} sums the weighted sups over derivative orders between 2
    and 2+ell; ||J||_ell adds the sup over orders at most 1.  The weight
    for order (dx, dxi) is ang(x)^(dx-1) ang(xi)^(dxi-1).
    """
    if ell < 0:
        raise PhaseError("ell must be non-negative")
    X, XI = grid.meshes()
    wx = angle_weight(X)
    wxi = angle_weight(XI)
    two_part = 0.0
    for total in range(2, 2 + ell + 1):
        for dx in range(total + 1):
            two_part += _j_weighted_sup(phi, grid, dx, total - dx, X, XI, wx, wxi)
    low_part = 0.0
    for total in range(2):
        for dx in range(total + 1):
            low_part = max(low_part,
                           _j_weighted_sup(phi, grid, dx, total - dx, X, XI, wx, wxi))
    return two_part, low_part + two_part


def j_sup2(phi, grid):
    """Sup over |orders| <= 2 of the weighted J-derivatives.

    This is the defining quantity of the regular class: a phase with
    j_sup2 <= tau (and nonvanishing mixed Hessian) has parameter tau.
    """
    X, XI = grid.meshes()
    wx = angle_weight(X)
    wxi = angle_weight(XI)
    out = 0.0
    for total in range(3):
        for dx in range(total + 1):
            out = max(out, _j_weighted_sup(phi, grid, dx, total - dx, X, XI, wx, wxi))
    return out


@dataclass
class PhaseCertificate:
    r: float
    tau: float
    ell: int
    j_two_ell: float
    j_ell: float
    phase_class: str
    band_ok: bool
    band_x: tuple
    band_xi: tuple

    def to_json(self):
        d = asdict(self)
        d["class"] = d.pop("phase_class")
        return json.dumps(d, sort_keys=True)


def _asymptotic_band(phi, grid, fraction=0.2, band=(0.25, 4.0)):
    """Check ang(phi'_x) ~ ang(xi) and ang(phi'_xi) ~ ang(x) on the outer
    annulus of the grid; the band is the desk-scale proxy for the
    asymptotic equivalences."""
    X, XI = grid.meshes()
    outer = (np.abs(X) >= (1.0 - fraction) * grid.lx) | \
            (np.abs(XI) >= (1.0 - fraction) * grid.lxi)
    rx = angle_weight(phi.d(X, XI, 1, 0)) / angle_weight(XI)
    rxi = angle_weight(phi.d(X, XI, 0, 1)) / angle_weight(X)
    rx = rx[outer]
    rxi = rxi[outer]
    lims_x = (float(rx.min()), float(rx.max()))
    lims_xi = (float(rxi.min()), float(rxi.max()))
    ok = (band[0] <= lims_x[0] and lims_x[1] <= band[1]
          and band[0] <= lims_xi[0] and lims_xi[1] <= band[1])
    return ok, lims_x, lims_xi


def certify_regular(phi, grid, ell=0):
    """Certificate {r, tau, class} for phi on the grid.

    r is the grid infimum of |phi''_{x xi}|; tau the weighted J-derivative
    sup up to order 2; the (tau, ell) class additionally reports ||J||_ell.
    """
    X, XI = grid.meshes()
    mixed = phi.j(X, XI, 1, 1) + 1.0
    r = float(np.min(np.abs(mixed)))
    tau = j_sup2(phi, grid)
    j2l, jl = j_seminorm(phi, ell, grid)
    band_ok, band_x, band_xi = _asymptotic_band(phi, grid)
    if not band_ok:
        cls = "fail"
    elif r <= 0.0 or tau >= 1.0:
        cls = "P"
    elif jl < 1.0:
        cls = "P_r(tau,ell)"
    else:
        cls = "P_r(tau)"
    return PhaseCertificate(r=r, tau=tau, ell=ell, j_two_ell=j2l, j_ell=jl,
                            phase_class=cls, band_ok=band_ok,
                            band_x=band_x, band_xi=band_xi)
