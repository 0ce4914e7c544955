"""SG symbols with order metadata, grid seminorms, and membership checks.

A symbol of order (m, mu) satisfies, for all derivative orders,

    |d_xi^alpha d_x^beta a(x, xi)| <= C * ang(x)^(m-beta) * ang(xi)^(mu-alpha),

with ang(u) = sqrt(1 + u^2).  An x-derivative discounts ang(x)-growth and
a xi-derivative discounts ang(xi)-growth.  Grid suprema are lower bounds
of the true seminorms: only a violation found on the grid is conclusive.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import expr as ex

DEFAULT_DERIVATIVE_CAP = 4


class SymbolError(Exception):
    pass


def angle_weight(u):
    """The weight ang(u) = sqrt(1 + u^2)."""
    u = np.asarray(u, dtype=float)
    return np.sqrt(1.0 + u * u)


@dataclass(frozen=True)
class SampleGrid:
    """Uniform rectangular sampling of (x, xi) in [-lx, lx] x [-lxi, lxi]."""

    lx: float
    lxi: float
    nx: int
    nxi: int

    def __post_init__(self):
        if self.nx < 2 or self.nxi < 2:
            raise SymbolError("grid needs at least 2 points per axis")
        if self.lx <= 0 or self.lxi <= 0:
            raise SymbolError("grid ranges must be non-degenerate")

    @cached_property
    def x(self):
        return np.linspace(-self.lx, self.lx, self.nx)

    @cached_property
    def xi(self):
        return np.linspace(-self.lxi, self.lxi, self.nxi)

    @property
    def dx(self):
        return 2.0 * self.lx / (self.nx - 1)

    @property
    def dxi(self):
        return 2.0 * self.lxi / (self.nxi - 1)

    def meshes(self):
        return np.meshgrid(self.x, self.xi, indexing="ij")

    def padded(self, pad_x, pad_xi=None):
        """Grid extended by pad on each side, keeping roughly the spacing."""
        if pad_xi is None:
            pad_xi = pad_x
        lx, lxi = self.lx + pad_x, self.lxi + pad_xi
        nx = self.nx + 2 * max(1, round(pad_x / self.dx))
        nxi = self.nxi + 2 * max(1, round(pad_xi / self.dxi))
        return SampleGrid(lx, lxi, nx, nxi)

    def refined(self, factor=2):
        return SampleGrid(self.lx, self.lxi,
                          (self.nx - 1) * factor + 1,
                          (self.nxi - 1) * factor + 1)


class SgSymbol:
    """Scalar symbol a(t, s, x, xi) with an exact derivative oracle.

    Built from an expression (symbolic differentiation, cached per multi
    order) or from explicit callables.  The claimed order (m, mu) is
    metadata: it is checked, never inferred.
    """

    def __init__(self, source, order=(0.0, 0.0), name=None,
                 derivative_cap=DEFAULT_DERIVATIVE_CAP):
        self.expr = ex.ensure_expr(source)
        self.order = (float(order[0]), float(order[1]))
        self.name = name if name is not None else ex.to_string(self.expr)
        self.derivative_cap = derivative_cap
        self._deriv_cache = {(0, 0, 0, 0): self.expr}

    @property
    def m(self):
        return self.order[0]

    @property
    def mu(self):
        return self.order[1]

    def _derivative_expr(self, dt, ds, dx, dxi):
        key = (dt, ds, dx, dxi)
        if key in self._deriv_cache:
            return self._deriv_cache[key]
        if sum(key) > self.derivative_cap:
            raise SymbolError(
                f"derivative order {key} exceeds cap {self.derivative_cap}")
        # peel one derivative off the highest-order slot already cached
        for var, idx in (("t", 0), ("s", 1), ("x", 2), ("xi", 3)):
            if key[idx] > 0:
                lower = list(key)
                lower[idx] -= 1
                base = self._derivative_expr(*lower)
                node = ex.differentiate(base, var, depth_cap=4096)
                self._deriv_cache[key] = node
                return node
        raise AssertionError("unreachable")

    def eval(self, x, xi, t=0.0, s=0.0):
        return self.deriv(x, xi, t=t, s=s)

    def deriv(self, x, xi, dx=0, dxi=0, dt=0, ds=0, t=0.0, s=0.0):
        node = self._derivative_expr(dt, ds, dx, dxi)
        env = {"t": t, "s": s, "x": np.asarray(x, dtype=float),
               "xi": np.asarray(xi, dtype=float)}
        value = ex.evaluate(node, env)
        return np.broadcast_to(np.asarray(value, dtype=float),
                               np.broadcast_shapes(np.shape(x), np.shape(xi))).copy()

    def negated(self):
        return SgSymbol(ex.Neg(self.expr), self.order,
                        name=f"-({self.name})",
                        derivative_cap=self.derivative_cap)

    def scaled(self, c):
        return SgSymbol(ex.Mul(ex.Num(float(c)), self.expr), self.order,
                        derivative_cap=self.derivative_cap)

    def self_check(self, points=None, step=1e-6, rtol=1e-4, rng=None):
        """Check the derivative oracle against central finite differences."""
        if rng is None:
            rng = np.random.default_rng(0)
        if points is None:
            points = rng.uniform(-3.0, 3.0, size=(25, 2))
        for (px, pxi) in points:
            for dx, dxi in ((1, 0), (0, 1)):
                exact = self.deriv(px, pxi, dx=dx, dxi=dxi)
                var = "x" if dx else "xi"
                env = {"t": 0.0, "s": 0.0, "x": px, "xi": pxi}
                fd = ex.finite_difference(self.expr, var, env, step)
                scale = max(1.0, abs(exact))
                if abs(exact - fd) > rtol * scale:
                    raise SymbolError(
                        f"derivative oracle disagrees with finite differences "
                        f"at (x, xi)=({px}, {pxi}), order ({dx},{dxi}): "
                        f"{exact} vs {fd}")
        return True

    def __repr__(self):
        return f"SgSymbol({self.name!r}, order={self.order})"


CONSTANT_ONE = SgSymbol("1.0", (0.0, 0.0), name="1")


@dataclass
class OrderReport:
    """Outcome of a membership or ellipticity test on a grid."""

    ok: bool
    value: float
    worst: dict = field(default_factory=dict)

    def __bool__(self):
        return self.ok


def seminorm(a, l, m, mu, grid, t=0.0, s=0.0, return_report=False):
    """Grid lower bound for the order-(m, mu) seminorm up to l derivatives.

    max over |alpha+beta| <= l of the grid sup of
    ang(x)^(-m+beta) ang(xi)^(-mu+alpha) |d_xi^alpha d_x^beta a|.
    """
    if l < 0:
        raise SymbolError("seminorm order must be non-negative")
    X, XI = grid.meshes()
    wx = angle_weight(X)
    wxi = angle_weight(XI)
    best = -np.inf
    worst = {}
    for total in range(l + 1):
        for beta in range(total + 1):
            alpha = total - beta
            vals = np.abs(a.deriv(X, XI, dx=beta, dxi=alpha, t=t, s=s))
            weighted = vals * wx ** (beta - m) * wxi ** (alpha - mu)
            idx = np.unravel_index(np.argmax(weighted), weighted.shape)
            if weighted[idx] > best:
                best = float(weighted[idx])
                worst = {"alpha": alpha, "beta": beta,
                         "x": float(X[idx]), "xi": float(XI[idx]),
                         "weighted": best}
    if return_report:
        return best, worst
    return best


def check_order(a, m, mu, l, grid, bound, t=0.0, s=0.0):
    """True iff the grid seminorm is below the claimed constant."""
    value, worst = seminorm(a, l, m, mu, grid, t=t, s=s, return_report=True)
    return OrderReport(ok=value <= bound, value=value, worst=worst)


def check_elliptic(a, m, mu, radius, grid, t=0.0, s=0.0):
    """Best ellipticity constant on grid points with |x| + |xi| >= radius.

    Returns a report with the largest C such that
    C ang(x)^m ang(xi)^mu <= |a| at every tested point; ok iff C > 0.
    """
    X, XI = grid.meshes()
    mask = np.abs(X) + np.abs(XI) >= radius
    if not np.any(mask):
        raise SymbolError(
            f"grid has no points with |x|+|xi| >= {radius}; enlarge it")
    vals = np.abs(a.eval(X, XI, t=t, s=s))
    weight = angle_weight(X) ** m * angle_weight(XI) ** mu
    ratio = np.where(mask, vals / weight, np.inf)
    idx = np.unravel_index(np.argmin(ratio), ratio.shape)
    best_c = float(ratio[idx])
    return OrderReport(ok=best_c > 0.0, value=best_c,
                       worst={"x": float(X[idx]), "xi": float(XI[idx]),
                              "abs_value": float(vals[idx])})
