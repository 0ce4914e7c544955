"""Fundamental solutions to first-order hyperbolic systems by Picard series.

The system is L = D_t + Lambda + R with Lambda a diagonal matrix of real
symbols lambda_j of order (eps, 1) and R a lower-order matrix of order
(eps - 1, 0).  Writing I_phi(t, s) for the block-diagonal FIO whose
phases solve the eikonal equation with symbol -lambda_j (the sign that
cancels the leading transport terms of L I_phi), the residual defines
W_1 = -i L I_phi, the recursion

    W_{nu+1}(t, s) = integral over [s, t] of W_1(t, th) W_nu(th, s) dth

produces contributions whose operator norms obey a factorial envelope,
and the fundamental solution is

    E(t, s) = I_phi(t, s) + integral of I_phi(t, th) sum of W_nu(th, s) dth.

All operators are realized as dense block matrices on the x-grid; time
integrals use composite Simpson on the uniform time grid; E(s, s) is the
exact identity.  A method-of-lines reference solver cross-validates the
Cauchy solutions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .eikonal import solve_eikonal
from .quantize import BandlimitedBasis, op_matrix
from .symbols import SampleGrid, SgSymbol


class HyperbolicError(Exception):
    pass


@dataclass
class HyperbolicSystem:
    """System data: diagonal symbols, lower-order coupling, horizon."""

    lambdas: list
    coupling: list
    eps: float
    t0: float
    n_steps: int
    grid: SampleGrid
    ode_step: float = 5e-3

    def __post_init__(self):
        m = len(self.lambdas)
        if m < 1:
            raise HyperbolicError("system size must be at least 1")
        if self.coupling is None:
            self.coupling = [[None] * m for _ in range(m)]
        if len(self.coupling) != m or any(len(row) != m for row in self.coupling):
            raise HyperbolicError("coupling matrix must be m x m")
        if self.t0 <= 0 or self.n_steps < 2:
            raise HyperbolicError("need a positive horizon and >= 2 steps")

    @property
    def size(self):
        return len(self.lambdas)

    @property
    def dt(self):
        return self.t0 / self.n_steps

    @property
    def times(self):
        return np.linspace(0.0, self.t0, self.n_steps + 1)

    def block_dim(self):
        return self.size * self.grid.nx


def transport_system(c=0.5, grid=None, t0=0.1, n_steps=8):
    """Scalar constant transport: d_t W + c d_x W = 0."""
    grid = grid or SampleGrid(12.0, 12.0, 128, 128)
    lam = SgSymbol(f"{c}*xi", (0.0, 1.0))
    return HyperbolicSystem([lam], None, eps=0.0, t0=t0, n_steps=n_steps,
                            grid=grid)


# ---------------------------------------------------------------------------
# Simpson weights on a slice of the uniform time grid


def simpson_weights(n_intervals, dt):
    """Composite Simpson weights for n_intervals uniform intervals.

    Even counts use plain Simpson, odd counts >= 3 splice a 3/8 rule on
    the last three intervals, one interval falls back to the trapezoid,
    zero intervals integrate to nothing.
    """
    n = n_intervals
    if n == 0:
        return np.zeros(1)
    if n == 1:
        return np.array([0.5, 0.5]) * dt
    w = np.zeros(n + 1)
    if n % 2 == 0:
        w[0] = w[-1] = 1.0
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        return w * dt / 3.0
    head = n - 3
    if head > 0:
        w[0] = 1.0
        w[1:head:2] = 4.0
        w[2:head:2] = 2.0
        w[head] = 1.0
        w[:head + 1] *= dt / 3.0
    tail = np.array([1.0, 3.0, 3.0, 1.0]) * 3.0 * dt / 8.0
    w[head:] += tail
    return w


# ---------------------------------------------------------------------------
# Phase and operator tables


@dataclass
class OperatorTables:
    """Per-pair phases and block operator matrices on the time grid.

    Index pairs (i, j) refer to (t, s) = (theta_i, theta_j); the ladder
    extends two levels below the diagonal and above the horizon (the
    eikonal solver integrates backwards as happily as forwards), so the
    centered five-point time stencil fits at every pair of interest.
    """

    system: HyperbolicSystem
    phases: dict = field(default_factory=dict)
    iphi: dict = field(default_factory=dict)
    lam_blocks: dict = field(default_factory=dict)
    r_blocks: dict = field(default_factory=dict)

    def time(self, i):
        return i * self.system.dt


def build_phases(sys: HyperbolicSystem, shoot_tol=1e-10, progress=None):
    """Solve the eikonal phases for every needed (i, j) pair.

    The phases solve d_t phi = a(t, x, phi'_x) with a = -lambda_j: this is
    the choice under which the transport part of L I_phi cancels (the
    kernel of (D_t + Op(lambda)) I_phi carries d_t phi + lambda(t, x,
    phi'_x)).
    """
    tables = OperatorTables(system=sys)
    K = sys.n_steps
    dt = sys.dt
    pairs = [(i, j) for j in range(K + 1) for i in range(j - 2, K + 3)]
    negated = [lam.negated() for lam in sys.lambdas]
    for (i, j) in pairs:
        comp_phases = []
        for lam_neg in negated:
            comp_phases.append(
                solve_eikonal(lam_neg, i * dt, j * dt, sys.grid,
                              h=sys.ode_step, tol=shoot_tol))
        tables.phases[(i, j)] = comp_phases
        if progress:
            progress(i, j)
    return tables


def _block_diag(mats):
    rows = sum(m.shape[0] for m in mats)
    cols = sum(m.shape[1] for m in mats)
    out = np.zeros((rows, cols), dtype=complex)
    r = c = 0
    for mat in mats:
        out[r:r + mat.shape[0], c:c + mat.shape[1]] = mat
        r += mat.shape[0]
        c += mat.shape[1]
    return out


def iphi_matrix(tables: OperatorTables, i, j):
    """Block-diagonal I_phi(theta_i, theta_j)."""
    key = (i, j)
    if key not in tables.iphi:
        sys = tables.system
        blocks = [op_matrix("type1", 1.0, p, sys.grid).matrix
                  for p in tables.phases[key]]
        tables.iphi[key] = _block_diag(blocks)
    return tables.iphi[key]


def lambda_block(tables: OperatorTables, i):
    if i not in tables.lam_blocks:
        sys = tables.system
        t = tables.time(i)
        blocks = [op_matrix("pseudo", lam, None, sys.grid, t=t).matrix
                  for lam in sys.lambdas]
        tables.lam_blocks[i] = _block_diag(blocks)
    return tables.lam_blocks[i]


def coupling_block(tables: OperatorTables, i):
    if i not in tables.r_blocks:
        sys = tables.system
        t = tables.time(i)
        n = sys.grid.nx
        m = sys.size
        out = np.zeros((m * n, m * n), dtype=complex)
        for r_idx, row in enumerate(sys.coupling):
            for c_idx, entry in enumerate(row):
                if entry is None:
                    continue
                out[r_idx * n:(r_idx + 1) * n, c_idx * n:(c_idx + 1) * n] = \
                    op_matrix("pseudo", entry, None, sys.grid, t=t).matrix
        tables.r_blocks[i] = out
    return tables.r_blocks[i]


def fd_weights(offsets, order=1):
    """First-derivative weights on integer offsets (unit spacing)."""
    offs = np.asarray(offsets, float)
    n = offs.size
    rhs = np.zeros(n)
    rhs[order] = float(math.factorial(order))
    vander = np.vander(offs, n, increasing=True).T
    return np.linalg.solve(vander, rhs)


_CENTERED5 = (-2, -1, 0, 1, 2)
_SKEW5 = (-1, 0, 1, 2, 3)


def d_t_iphi(tables: OperatorTables, i, j, offsets=_CENTERED5):
    """Time derivative of I_phi(., theta_j) at theta_i.

    The default centered five-point stencil is fourth order; the skewed
    variant backs the independently assembled telescoping check.
    """
    dt = tables.system.dt
    weights = fd_weights(offsets) / dt
    out = None
    for off, wgt in zip(offsets, weights):
        term = wgt * iphi_matrix(tables, i + off, j)
        out = term if out is None else out + term
    return out


def residual_W1(tables: OperatorTables, i, j, offsets=_CENTERED5):
    """W_1(theta_i, theta_j) = -i L I_phi as a block matrix."""
    li = (-1j * d_t_iphi(tables, i, j, offsets=offsets)
          + (lambda_block(tables, i) + coupling_block(tables, i))
          @ iphi_matrix(tables, i, j))
    return -1j * li


def w1_step_check(tables: OperatorTables, i, j,
                  basis: BandlimitedBasis = None):
    """Coarseness detector for the time stencil behind W_1.

    Rebuilds the time derivative on the doubled step (offsets -4..4 in
    twos, available from the same ladder) and reports the corpus norm of
    the gap next to the norm of W_1 itself: when the gap is comparable,
    the step is too coarse and the residual is dominated by truncation.
    """
    K = tables.system.n_steps
    if not (j + 2 <= i <= K - 2):
        raise HyperbolicError("step check needs two interior steps around i")
    Bb, _ = block_basis(tables.system, basis)
    fine = residual_W1(tables, i, j)
    coarse = residual_W1(tables, i, j, offsets=(-4, -2, 0, 2, 4))
    gap = float(np.linalg.norm((fine - coarse) @ Bb, 2))
    scale = float(np.linalg.norm(fine @ Bb, 2))
    return {"stencil_gap": gap, "w1_norm": scale,
            "truncation_dominates": bool(gap > 0.5 * max(scale, 1e-300))}


# ---------------------------------------------------------------------------
# Picard series and the fundamental solution


_hyp_basis_cache = {}


def hyperbolic_measure_basis(grid):
    """Corpus for hyperbolic operator-norm measurements.

    Frequencies stop at 6 on the default band 12: the system operators
    spread spectra (the coupling multipliers convolve by slowly decaying
    kernels), and test functions must stay effectively band-limited under
    them, not just by themselves.
    """
    if grid not in _hyp_basis_cache:
        _hyp_basis_cache[grid] = BandlimitedBasis.build(
            grid, n_hermite=20, freq_max=6, n_freq=6, centers=(-3.0, 3.0))
    return _hyp_basis_cache[grid]


def block_basis(sys: HyperbolicSystem, basis: BandlimitedBasis = None):
    """Stack a scalar corpus basis over the system components."""
    basis = basis or hyperbolic_measure_basis(sys.grid)
    return _block_diag([basis.matrix] * sys.size), basis


@dataclass
class FundamentalSolution:
    system: HyperbolicSystem
    tables: OperatorTables
    E: dict
    w1: dict
    wsum: dict
    wlast: dict
    order_norms: list
    n_orders: int
    wsum_column0_by_order: list

    def times(self):
        return self.system.times


def picard_series(sys: HyperbolicSystem, tables: OperatorTables = None,
                  n_cap=8, tol=1e-10, basis: BandlimitedBasis = None):
    """Build the fundamental solution on all grid pairs.

    Per-order contribution norms are measured at the full-span pair
    (T0, 0) on the block corpus; the recursion stops when a contribution
    drops below tol relative to the first order, or at the cap.  A series
    that has not started decaying by order 3 aborts: the horizon is too
    large or W_1 is mis-assembled.
    """
    if tables is None:
        tables = build_phases(sys)
    K = sys.n_steps
    dt = sys.dt
    Bb, _ = block_basis(sys, basis)

    pairs = [(i, j) for j in range(K + 1) for i in range(j, K + 1)]
    w1 = {pair: residual_W1(tables, *pair) for pair in pairs}
    wsum = {pair: w1[pair].copy() for pair in pairs}
    wprev = w1
    norms = [float(np.linalg.norm(w1[(K, 0)] @ Bb, 2))]
    col0 = [{i: wsum[(i, 0)].copy() for i in range(K + 1)}]
    wlast = wprev
    n_used = 1
    for nu in range(2, n_cap + 1):
        wnext = {}
        for (i, j) in pairs:
            acc = np.zeros_like(w1[(i, j)])
            if i > j:
                weights = simpson_weights(i - j, dt)
                for off, wgt in enumerate(weights):
                    k = j + off
                    if wgt != 0.0:
                        acc += wgt * (w1[(i, k)] @ wprev[(k, j)])
            wnext[(i, j)] = acc
        norms.append(float(np.linalg.norm(wnext[(K, 0)] @ Bb, 2)))
        for pair in pairs:
            wsum[pair] += wnext[pair]
        col0.append({i: wsum[(i, 0)].copy() for i in range(K + 1)})
        wlast = wnext
        wprev = wnext
        n_used = nu
        if norms[-1] <= tol * max(norms[0], 1e-300):
            break
        if nu >= 3 and norms[-1] > norms[0]:
            raise HyperbolicError(
                "Picard contributions are not decaying by order 3: "
                "shrink T0 or check the residual assembly")

    n_block = sys.block_dim()
    E = {}
    for (i, j) in pairs:
        if i == j:
            E[(i, j)] = np.eye(n_block, dtype=complex)
            continue
        acc = iphi_matrix(tables, i, j).astype(complex).copy()
        weights = simpson_weights(i - j, dt)
        for off, wgt in enumerate(weights):
            k = j + off
            if wgt != 0.0:
                acc += wgt * (iphi_matrix(tables, i, k) @ wsum[(k, j)])
        E[(i, j)] = acc
    return FundamentalSolution(system=sys, tables=tables, E=E, w1=w1,
                               wsum=wsum, wlast=wlast, order_norms=norms,
                               n_orders=n_used, wsum_column0_by_order=col0)


def factorial_envelope_report(fs: FundamentalSolution, floor_rel=1e-5):
    """Stability of the fitted envelope constant across orders.

    Ratios r_nu = |W_{nu+1}| / |W_nu| should track C T0 / nu; the report
    carries the per-step constants C_nu = r_nu nu / T0 and their spread.
    Orders whose norms have dropped below floor_rel of the first order
    are quadrature noise and are excluded from the fit.
    """
    t0 = fs.system.t0
    norms = fs.order_norms
    floor = floor_rel * max(norms[0], 1e-300)
    consts = []
    for nu in range(1, len(norms)):
        if norms[nu] <= floor or norms[nu - 1] <= floor:
            break
        consts.append(norms[nu] / norms[nu - 1] * nu / t0)
    report = {"order_norms": norms, "envelope_constants": consts}
    if consts:
        report["spread"] = max(consts) / max(min(consts), 1e-300)
        report["fitted_C"] = max(consts)
    return report


def solve_cauchy(fs: FundamentalSolution, w0, forcing=None):
    """Duhamel: W(t) = E(t, 0) G + i * integral of E(t, s) F(s) ds.

    w0 is an (m, nx) complex array; forcing, if given, maps a time index
    to an (m, nx) array sampled on the time grid.  Returns the trajectory
    with shape (K+1, m, nx).
    """
    sys = fs.system
    K = sys.n_steps
    nx = sys.grid.nx
    g_vec = np.asarray(w0, complex).reshape(sys.size * nx)
    out = np.empty((K + 1, sys.size, nx), dtype=complex)
    f_cache = None
    if forcing is not None:
        f_cache = [np.asarray(forcing(k), complex).reshape(sys.size * nx)
                   for k in range(K + 1)]
    for i in range(K + 1):
        vec = fs.E[(i, 0)] @ g_vec
        if f_cache is not None and i > 0:
            weights = simpson_weights(i, sys.dt)
            for off, wgt in enumerate(weights):
                if wgt != 0.0:
                    vec = vec + 1j * wgt * (fs.E[(i, off)] @ f_cache[off])
        out[i] = vec.reshape(sys.size, nx)
    return out


def reference_solve(sys: HyperbolicSystem, w0, forcing=None, substeps=4):
    """Method-of-lines oracle: d_t W = i (F - (Lambda + R) W), RK4 in time.

    Lambda and R are assembled as fresh pseudodifferential matrices at the
    stage times; a tenfold norm growth in one step aborts as instability.
    This is the oracle the Picard construction is compared against, not
    part of the construction itself.
    """
    nx = sys.grid.nx
    m = sys.size
    K = sys.n_steps
    dt_sub = sys.dt / substeps

    cache = {}

    def generator(t):
        key = round(t / (dt_sub / 2))
        if key not in cache:
            blocks = [op_matrix("pseudo", lam, None, sys.grid, t=t).matrix
                      for lam in sys.lambdas]
            gen = _block_diag(blocks)
            for r_idx, row in enumerate(sys.coupling):
                for c_idx, entry in enumerate(row):
                    if entry is None:
                        continue
                    gen[r_idx * nx:(r_idx + 1) * nx,
                        c_idx * nx:(c_idx + 1) * nx] += \
                        op_matrix("pseudo", entry, None, sys.grid, t=t).matrix
            cache[key] = gen
        return cache[key]

    def rhs(t, w):
        out = -1j * (generator(t) @ w)
        if forcing is not None:
            out = out + 1j * forcing_at(t)
        return out

    def forcing_at(t):
        k = t / sys.dt
        k0 = int(np.clip(np.floor(k), 0, K - 1))
        frac = k - k0
        f0 = np.asarray(forcing(k0), complex).reshape(m * nx)
        f1 = np.asarray(forcing(min(k0 + 1, K)), complex).reshape(m * nx)
        return (1 - frac) * f0 + frac * f1

    w = np.asarray(w0, complex).reshape(m * nx).copy()
    out = np.empty((K + 1, m, nx), dtype=complex)
    out[0] = w.reshape(m, nx)
    t = 0.0
    for step in range(K):
        for _ in range(substeps):
            before = np.linalg.norm(w)
            k1 = rhs(t, w)
            k2 = rhs(t + dt_sub / 2, w + dt_sub / 2 * k1)
            k3 = rhs(t + dt_sub / 2, w + dt_sub / 2 * k2)
            k4 = rhs(t + dt_sub, w + dt_sub * k3)
            w = w + dt_sub / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            t += dt_sub
            if np.linalg.norm(w) > 10.0 * max(before, 1e-300):
                raise HyperbolicError(
                    f"reference solver blow-up at t = {t:.4f}")
        out[step + 1] = w.reshape(m, nx)
    return out


# ---------------------------------------------------------------------------
# Structural checks


def telescoping_residual(fs: FundamentalSolution, i, j,
                         basis: BandlimitedBasis = None):
    """Residual of the partial-sum identity at one pair, both sides built
    independently: the left side is the stored recursion output, the right
    side re-applies L to I_phi with a fourth-order time stencil.
    """
    sys = fs.system
    tables = fs.tables
    Bb, _ = block_basis(sys, basis)
    lhs = fs.wsum[(i, j)]

    def li_indep(a, b):
        return 1j * residual_W1(tables, a, b, offsets=_SKEW5)

    rhs = -1j * li_indep(i, j)
    wsum_prev = {p: fs.wsum[p] - fs.wlast[p] for p in fs.wsum}
    weights = simpson_weights(i - j, sys.dt)
    for off, wgt in enumerate(weights):
        k = j + off
        if wgt != 0.0:
            rhs = rhs - 1j * (li_indep(i, k) @ wsum_prev[(k, j)]) * wgt
    scale = max(float(np.linalg.norm(lhs @ Bb, 2)), 1e-300)
    return float(np.linalg.norm((lhs - rhs) @ Bb, 2)), scale


def le_residual_by_order(fs: FundamentalSolution, i,
                         basis: BandlimitedBasis = None):
    """Norms of L E_nu(theta_i, 0) for nu = 1..N, plus the final-order
    comparison against the integral of (L I_phi) W_N.

    D_t E uses centered differences of the assembled E_nu, so the residual
    is measured independently of the construction.
    """
    sys = fs.system
    tables = fs.tables
    K = sys.n_steps
    dt = sys.dt
    if not (2 <= i <= K - 2):
        raise HyperbolicError("need a time index two steps inside the grid")
    Bb, _ = block_basis(sys, basis)

    def partial_E(a, order_idx):
        if a == 0:
            return np.eye(sys.block_dim(), dtype=complex)
        acc = iphi_matrix(tables, a, 0).astype(complex).copy()
        weights = simpson_weights(a, dt)
        col = fs.wsum_column0_by_order[order_idx]
        for off, wgt in enumerate(weights):
            if wgt != 0.0:
                acc += wgt * (iphi_matrix(tables, a, off) @ col[off])
        return acc

    stencil = fd_weights(_CENTERED5) / dt

    def le_of(order_idx):
        d_t = None
        for off, wgt in zip(_CENTERED5, stencil):
            term = wgt * partial_E(i + off, order_idx)
            d_t = term if d_t is None else d_t + term
        return (-1j * d_t
                + (lambda_block(tables, i) + coupling_block(tables, i))
                @ partial_E(i, order_idx))

    norms = [float(np.linalg.norm(le_of(k) @ Bb, 2))
             for k in range(len(fs.wsum_column0_by_order))]

    target = np.zeros_like(fs.w1[(i, 0)])
    weights = simpson_weights(i, dt)
    for off, wgt in enumerate(weights):
        if wgt != 0.0:
            target += wgt * ((1j * fs.w1[(i, off)]) @ fs.wlast[(off, 0)])
    final_gap = float(np.linalg.norm((le_of(-1) - target) @ Bb, 2))
    return {"le_norms_by_order": norms, "final_order_gap": final_gap}


def semigroup_residual(fs: FundamentalSolution, i, j, k,
                       basis: BandlimitedBasis = None):
    """|E(t,s) E(s,r) - E(t,r)| on the block corpus, for r <= s <= t."""
    if not (k <= j <= i):
        raise HyperbolicError("need time indices k <= j <= i")
    Bb, _ = block_basis(fs.system, basis)
    lhs = fs.E[(i, j)] @ fs.E[(j, k)]
    diff = lhs - fs.E[(i, k)]
    scale = max(float(np.linalg.norm(fs.E[(i, k)] @ Bb, 2)), 1e-300)
    return float(np.linalg.norm(diff @ Bb, 2)) / scale
