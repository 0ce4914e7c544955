"""Grid realization of pseudodifferential operators and FIOs (n = 1).

Fourier convention: the forward transform carries no 2*pi factor,

    uhat(xi) = integral of exp(-i x xi) u(x) dx,

and the inverse carries (2*pi)^(-1).  A type-I operator with symbol a and
phase phi acts as

    (A u)(x) = (2*pi)^(-1) integral of exp(i phi(x, xi)) a(x, xi) uhat(xi) dxi,

realized as dense matrices by Riemann sums on the sampling grid; a type-II
operator is the conjugate transpose of the type-I matrix built from the
same data.  Operator-norm statements are measured on the band-limited
subspace spanned by an orthonormalized corpus of Hermite functions,
Gaussian-windowed plane waves, and shifted Gaussians: full-grid operator
norms are contaminated by truncation and are never asserted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import qr as scipy_qr

from .multiproduct import PhaseChain, multiproduct
from .phase import certify_regular
from .symbols import SampleGrid, SgSymbol, angle_weight

TWO_PI = 2.0 * math.pi


class QuantizeError(Exception):
    pass


def default_grid():
    """Desk-scale operator grid: 256 points per axis on [-12, 12]."""
    return SampleGrid(12.0, 12.0, 256, 256)


def fft_grid(lx=12.0, n=256):
    """Grid satisfying the fast-path condition dx * dxi * n = 2*pi."""
    dx = 2.0 * lx / (n - 1)
    dxi = TWO_PI / (n * dx)
    return SampleGrid(lx, dxi * (n - 1) / 2.0, n, n)


def fft_compatible(grid: SampleGrid):
    return (grid.nx == grid.nxi
            and abs(grid.dx * grid.dxi * grid.nx - TWO_PI) < 1e-10 * TWO_PI)


@dataclass
class GridFunction:
    """Complex samples on one axis of a grid ("x" or "xi")."""

    values: np.ndarray
    grid: SampleGrid
    axis: str = "x"

    def __post_init__(self):
        self.values = np.asarray(self.values, complex)
        n = self.grid.nx if self.axis == "x" else self.grid.nxi
        if self.values.shape != (n,):
            raise QuantizeError(f"expected {n} samples on axis {self.axis}")
        if not np.all(np.isfinite(self.values)):
            raise QuantizeError("grid function has non-finite entries")

    @property
    def nodes(self):
        return self.grid.x if self.axis == "x" else self.grid.xi

    @property
    def spacing(self):
        return self.grid.dx if self.axis == "x" else self.grid.dxi

    def l2(self):
        return float(np.sqrt(self.spacing * np.sum(np.abs(self.values) ** 2)))

    def inner(self, other):
        return complex(self.spacing
                       * np.sum(self.values * np.conj(other.values)))


def grid_function(fn, grid, axis="x"):
    nodes = grid.x if axis == "x" else grid.xi
    return GridFunction(np.asarray(fn(nodes), complex), grid, axis)


# ---------------------------------------------------------------------------
# Transforms

_matrix_cache = {}


def _check_sampling(grid):
    """Each axis has to resolve the oscillations the other axis requests;
    beyond that the Riemann sums alias and every operator is garbage."""
    if grid.dx * grid.lxi > np.pi * (1 + 1e-9):
        raise QuantizeError(
            f"x-spacing {grid.dx:.3f} cannot resolve frequencies up to "
            f"{grid.lxi}: need dx * lxi <= pi (more x-nodes or smaller band)")
    if grid.dxi * grid.lx > np.pi * (1 + 1e-9):
        raise QuantizeError(
            f"xi-spacing {grid.dxi:.3f} cannot resolve positions up to "
            f"{grid.lx}: need dxi * lx <= pi (more xi-nodes)")


def forward_matrix(grid: SampleGrid):
    """Dense forward transform, xi-samples from x-samples."""
    key = ("F", grid)
    if key not in _matrix_cache:
        _check_sampling(grid)
        _matrix_cache[key] = grid.dx * np.exp(
            -1j * np.outer(grid.xi, grid.x))
    return _matrix_cache[key]


def inverse_matrix(grid: SampleGrid):
    key = ("Finv", grid)
    if key not in _matrix_cache:
        _check_sampling(grid)
        _matrix_cache[key] = grid.dxi / TWO_PI * np.exp(
            1j * np.outer(grid.x, grid.xi))
    return _matrix_cache[key]


def fourier(u: GridFunction, force_direct=False, require_fast=False):
    """uhat on the xi-grid; uses the FFT when the grid is compatible.

    require_fast raises instead of falling back to dense quadrature when
    the grid misses the compatibility condition dx * dxi * n = 2 pi.
    """
    if u.axis != "x":
        raise QuantizeError("fourier expects x-samples")
    g = u.grid
    if require_fast and not fft_compatible(g):
        raise QuantizeError(
            "fast path requested but dx * dxi * n != 2 pi on this grid")
    if fft_compatible(g) and not force_direct:
        n = g.nx
        xi0 = g.xi[0]
        pre = u.values * np.exp(-1j * g.dx * np.arange(n) * xi0)
        vals = g.dx * np.exp(-1j * g.x[0] * g.xi) * np.fft.fft(pre)
        return GridFunction(vals, g, "xi")
    return GridFunction(forward_matrix(g) @ u.values, g, "xi")


def inverse_fourier(v: GridFunction, force_direct=False, require_fast=False):
    if v.axis != "xi":
        raise QuantizeError("inverse_fourier expects xi-samples")
    g = v.grid
    if require_fast and not fft_compatible(g):
        raise QuantizeError(
            "fast path requested but dx * dxi * n != 2 pi on this grid")
    if fft_compatible(g) and not force_direct:
        n = g.nxi
        x0 = g.x[0]
        pre = v.values * np.exp(1j * x0 * np.arange(n) * g.dxi)
        vals = (g.dxi / TWO_PI * n
                * np.exp(1j * g.x * g.xi[0]) * np.fft.ifft(pre))
        return GridFunction(vals, g, "x")
    return GridFunction(inverse_matrix(g) @ v.values, g, "x")


# ---------------------------------------------------------------------------
# Operator matrices


def symbol_values(sym, X, XI, t=0.0, s=0.0):
    """Evaluate a symbol-like object on meshes: SgSymbol, callable,
    ndarray, or scalar."""
    if isinstance(sym, SgSymbol):
        return np.asarray(sym.eval(X, XI, t=t, s=s), complex)
    if callable(sym):
        return np.asarray(sym(X, XI), complex)
    if np.isscalar(sym):
        return np.full(np.broadcast_shapes(X.shape, XI.shape), complex(sym))
    arr = np.asarray(sym, complex)
    if arr.shape != np.broadcast_shapes(X.shape, XI.shape):
        raise QuantizeError("symbol array shape does not match the grid")
    return arr


@dataclass
class OperatorMatrix:
    """Dense matrix acting on x-samples, with provenance."""

    matrix: np.ndarray
    grid: SampleGrid
    provenance: str = ""

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, complex)
        n = self.grid.nx
        if self.matrix.shape != (n, n):
            raise QuantizeError(f"operator matrix must be {n} x {n}")

    def apply(self, u: GridFunction):
        return GridFunction(self.matrix @ u.values, self.grid, "x")

    def adjoint(self):
        return OperatorMatrix(self.matrix.conj().T, self.grid,
                              provenance=f"adjoint({self.provenance})")

    def __matmul__(self, other):
        return OperatorMatrix(self.matrix @ other.matrix, self.grid,
                              provenance=f"{self.provenance}*{other.provenance}")


def op_matrix(kind, a, phi, grid: SampleGrid, t=0.0, s=0.0):
    """Dense realization of one operator on the grid.

    kind "type1": exp(i phi) amplitude against uhat; "type2": the formal
    adjoint of the type-I matrix with the same data; "pseudo": left
    quantization (phi ignored, the phase is x*xi).
    """
    X, XI = np.meshgrid(grid.x, grid.xi, indexing="ij")
    if kind == "pseudo":
        phase_vals = X * XI
    elif kind in ("type1", "type2"):
        if phi is None:
            raise QuantizeError("type I/II operators need a phase")
        phase_vals = phi.value(X, XI)
    else:
        raise QuantizeError(f"unknown operator kind {kind!r}")
    amp = symbol_values(a, X, XI, t=t, s=s)
    kernel = (grid.dxi / TWO_PI) * np.exp(1j * phase_vals) * amp
    m = kernel @ forward_matrix(grid)
    if kind == "type2":
        m = m.conj().T
    return OperatorMatrix(m, grid, provenance=kind)


def apply_type1(a, phi, u: GridFunction, t=0.0, s=0.0,
                decay_threshold=1e-10):
    """Apply a type-I FIO; warns through the result when u has not decayed
    at the grid boundary (truncation error estimate attached)."""
    g = u.grid
    warning = _truncation_warning(u, decay_threshold)
    out = op_matrix("type1", a, phi, g, t=t, s=s).apply(u)
    out.truncation_warning = warning
    return out


def apply_type2(b, phi, u: GridFunction, t=0.0, s=0.0,
                decay_threshold=1e-10):
    g = u.grid
    warning = _truncation_warning(u, decay_threshold)
    out = op_matrix("type2", b, phi, g, t=t, s=s).apply(u)
    out.truncation_warning = warning
    return out


def _truncation_warning(u, threshold):
    peak = float(np.max(np.abs(u.values)))
    edge = float(max(abs(u.values[0]), abs(u.values[-1])))
    if peak > 0 and edge > threshold * peak:
        return {"boundary_to_peak": edge / peak, "threshold": threshold}
    return None


def identity_matrix(grid):
    return OperatorMatrix(np.eye(grid.nx, dtype=complex), grid,
                          provenance="identity")


def sobolev_norm(u: GridFunction, r, rho):
    """Weighted Sobolev norm: ang(x)^r applied after the Fourier
    multiplier ang(xi)^rho."""
    g = u.grid
    uhat = fourier(u)
    uhat = GridFunction(uhat.values * angle_weight(g.xi) ** rho, g, "xi")
    w = inverse_fourier(uhat)
    vals = angle_weight(g.x) ** r * w.values
    return float(np.sqrt(g.dx * np.sum(np.abs(vals) ** 2)))


# ---------------------------------------------------------------------------
# Band-limited subspace


def hermite_functions(x, count):
    """First `count` L2-normalized Hermite functions on the nodes."""
    out = np.empty((count, x.size))
    h_prev = np.pi ** -0.25 * np.exp(-x * x / 2.0)
    out[0] = h_prev
    if count == 1:
        return out
    h = np.sqrt(2.0) * x * h_prev
    out[1] = h
    for k in range(1, count - 1):
        h_next = (np.sqrt(2.0 / (k + 1)) * x * h
                  - np.sqrt(k / (k + 1)) * h_prev)
        h_prev, h = h, h_next
        out[k + 1] = h
    return out


@dataclass
class BandlimitedBasis:
    """Orthonormal basis B of the desk-scale test subspace, plus the raw
    corpus used for per-function checks."""

    grid: SampleGrid
    matrix: np.ndarray = field(default=None)
    corpus: list = field(default_factory=list)

    @classmethod
    def build(cls, grid, n_hermite=24, freq_max=8, n_freq=8, centers=None,
              sigma=1.75, trim=1e-3):
        x = grid.x
        cols = []
        names = []
        for k, h in enumerate(hermite_functions(x, n_hermite)):
            cols.append(h.astype(complex))
            names.append(f"hermite{k}")
        envelope = np.exp(-x * x / (2.0 * sigma ** 2))
        for nu in np.linspace(-freq_max, freq_max, 2 * n_freq + 1):
            if abs(nu) < 1e-12:
                continue
            cols.append(envelope * np.exp(1j * nu * x))
            names.append(f"wave{nu:+.2f}")
        if centers is None:
            centers = (-4.0, -2.0, 2.0, 4.0)
        for c in centers:
            cols.append(np.exp(-(x - c) ** 2 / (2.0 * 1.4 ** 2))
                        .astype(complex))
            names.append(f"gauss@{c:+.1f}")
        raw = np.stack(cols, axis=1)
        raw /= np.linalg.norm(raw, axis=0)
        # pivoted QR, trimming nearly dependent directions: unpivoted tail
        # columns are difference vectors dominated by high-frequency junk
        # that the grid transforms annihilate
        q, rmat, _ = scipy_qr(raw, mode="economic", pivoting=True)
        diag = np.abs(np.diag(rmat))
        keep = diag > trim * diag[0]
        basis = cls(grid=grid, matrix=q[:, keep])
        basis.corpus = [GridFunction(raw[:, j], grid, "x")
                        for j in range(raw.shape[1])]
        basis.names = names
        return basis

    @property
    def dim(self):
        return self.matrix.shape[1]

    def subspace_norm(self, op):
        """Spectral norm of the operator restricted to the subspace."""
        m = op.matrix if isinstance(op, OperatorMatrix) else np.asarray(op)
        return float(np.linalg.norm(m @ self.matrix, 2))

    def random_function(self, rng):
        c = rng.standard_normal(self.dim) + 1j * rng.standard_normal(self.dim)
        vals = self.matrix @ (c / np.linalg.norm(c))
        return GridFunction(vals, self.grid, "x")


def inversion_basis(grid, threshold=0.5):
    """The grid's own band-limited subspace: dominant eigenvectors of the
    band-limiting operator G = inverse transform of the forward transform.

    Every operator built here produces band-limited outputs, so this span
    contains all the intermediate images that restricted inversions have
    to handle; its dimension is set by the time-bandwidth product of the
    grid rather than by a hand-picked corpus.
    """
    key = ("prolate", grid, threshold)
    if key not in _matrix_cache:
        g_op = inverse_matrix(grid) @ forward_matrix(grid)
        evals, evecs = np.linalg.eigh((g_op + g_op.conj().T) / 2.0)
        keep = evals > threshold
        _matrix_cache[key] = BandlimitedBasis(grid=grid,
                                              matrix=evecs[:, keep])
    return _matrix_cache[key]


# ---------------------------------------------------------------------------
# Inversion of I_phi (constant-symbol FIO)


@dataclass
class InvertResult:
    qstar: OperatorMatrix
    qstar_left: OperatorMatrix
    residual_right: float
    residual_left: float
    neumann_norm: float

    @property
    def residual(self):
        return max(self.residual_right, self.residual_left)


def invert_Iphi(phi, grid, basis: BandlimitedBasis = None,
                measure_basis: BandlimitedBasis = None):
    """Invert I_phi on the band-limited subspace.

    M1 = type-I matrix with symbol 1, M2 its adjoint; the perturbation
    A0 = M1 M2 - I restricted to the subspace is solved directly, giving
    the right inverse M2 (I + A0)^(-1); the left inverse solves the
    mirrored restriction.  The full-grid system is rank-deficient by
    construction (the default grids undersample the time-bandwidth
    product), which is why the restriction is essential.  Residuals of
    M1 Q* - I and Q* M1 - I are operator norms over the decayed corpus;
    the border modes of the restriction space sit against the grid edge
    and are not part of any operator-norm statement.
    """
    if basis is None:
        basis = inversion_basis(grid)
    if measure_basis is None:
        measure_basis = _default_measure_basis(grid)
    m1 = op_matrix("type1", 1.0, phi, grid)
    m2 = m1.adjoint()
    B = basis.matrix
    Bh = B.conj().T
    eye = np.eye(grid.nx, dtype=complex)

    s_right = Bh @ (m1.matrix @ m2.matrix) @ B
    neumann = float(np.linalg.norm(s_right - np.eye(basis.dim), 2))
    if np.linalg.cond(s_right) > 1e12:
        raise QuantizeError(
            "I + A0 numerically singular: tau too large or grid too coarse")
    qr_mat = m2.matrix @ B @ np.linalg.solve(s_right, Bh)
    residual_right = measure_basis.subspace_norm(m1.matrix @ qr_mat - eye)

    s_left = Bh @ (m2.matrix @ m1.matrix) @ B
    ql_mat = B @ np.linalg.solve(s_left, Bh @ m2.matrix)
    residual_left = measure_basis.subspace_norm(ql_mat @ m1.matrix - eye)

    return InvertResult(
        qstar=OperatorMatrix(qr_mat, grid, provenance="qstar_right"),
        qstar_left=OperatorMatrix(ql_mat, grid, provenance="qstar_left"),
        residual_right=residual_right,
        residual_left=residual_left,
        neumann_norm=neumann)


def _default_measure_basis(grid):
    key = ("measure", grid)
    if key not in _matrix_cache:
        _matrix_cache[key] = BandlimitedBasis.build(grid)
    return _matrix_cache[key]


# ---------------------------------------------------------------------------
# Symbol extraction by plane-wave probing


def probe_taper(grid, flat_fraction=0.75):
    """Raised-cosine taper: 1 on the inner fraction of the x-range, cosine
    rolloff to 0 at the boundary."""
    x = grid.x
    lx = grid.lx
    knee = flat_fraction * lx
    out = np.ones_like(x)
    ramp = np.abs(x) > knee
    out[ramp] = 0.5 * (1.0 + np.cos(
        np.pi * (np.abs(x[ramp]) - knee) / (lx - knee)))
    return out


def extract_symbol(op: OperatorMatrix, phi, grid, xi_band=6.0,
                   x_fraction=0.6):
    """Gridded symbol p with op ~ Op_phi(p), by windowed plane-wave probing.

    Returns (x_probe, xi_probe, p) restricted to |x| below x_fraction of
    the range (where the taper is flat) and |xi| below xi_band.
    """
    taper = probe_taper(grid)
    xsel = np.abs(grid.x) <= x_fraction * grid.lx
    xisel = np.abs(grid.xi) <= xi_band
    x_probe = grid.x[xsel]
    xi_probe = grid.xi[xisel]
    waves = taper[:, None] * np.exp(1j * np.outer(grid.x, xi_probe))
    responses = op.matrix @ waves
    phase_vals = phi.value(x_probe[:, None], xi_probe[None, :])
    p = np.exp(-1j * phase_vals) * responses[xsel, :]
    return x_probe, xi_probe, p


def _symbol_class_report(x_probe, xi_probe, p):
    """Boundedness proxies for membership in the order-(0,0) class."""
    wx = angle_weight(x_probe)
    wxi = angle_weight(xi_probe)
    dpx = np.gradient(p, x_probe, axis=0)
    dpxi = np.gradient(p, xi_probe, axis=1)
    return {
        "sup_abs": float(np.max(np.abs(p))),
        "sup_weighted_dx": float(np.max(np.abs(dpx) * wx[:, None])),
        "sup_weighted_dxi": float(np.max(np.abs(dpxi) * wxi[None, :])),
    }


def compose_extract_symbol(phi1, phi2, grid, cert_grid=None, tol=1e-12,
                           xi_band=6.0):
    """Compose I_phi1 with I_phi2 and extract the zero-order symbol.

    Returns (product phase, probed p on the probe window, report).
    """
    cert_grid = cert_grid or grid
    chain = PhaseChain.from_phases([phi1, phi2], cert_grid)
    phi = multiproduct(chain, grid, tol=tol)
    P = op_matrix("type1", 1.0, phi1, grid) @ op_matrix("type1", 1.0, phi2, grid)
    x_probe, xi_probe, p = extract_symbol(P, phi, grid, xi_band=xi_band)
    report = _symbol_class_report(x_probe, xi_probe, p)
    report["sup_p_minus_one"] = float(np.max(np.abs(p - 1.0)))
    report["tau1_plus_tau2"] = chain.tau0
    return phi, (x_probe, xi_probe, p), report


# ---------------------------------------------------------------------------
# Chain factorization


def compose_chain(ops, grid, basis: BandlimitedBasis = None,
                  measure_basis: BandlimitedBasis = None,
                  cert_grid=None, tol=1e-12):
    """Compose type-I factors A_j = Op_{phi_j}(a_j) and verify the chain
    factorization A = R_1 ... R_M I_{Phi_M} with R_j built from inverses
    of the prefix products Phi_j.

    `basis` is the inversion restriction space; the residual is measured
    on `measure_basis`, a smaller corpus whose images under the chain stay
    inside the restriction space.
    """
    if basis is None:
        basis = inversion_basis(grid)
    if measure_basis is None:
        measure_basis = BandlimitedBasis.build(
            grid, n_hermite=16, freq_max=6, n_freq=6,
            centers=(-3.0, 3.0))
    cert_grid = cert_grid or grid
    if len(ops) < 2:
        raise QuantizeError("need at least two factors")
    symbols = [a for a, _ in ops]
    phases = [p for _, p in ops]
    factors = [op_matrix("type1", a, p, grid) for a, p in ops]
    A = factors[0]
    for f in factors[1:]:
        A = A @ f

    taus = [certify_regular(p, cert_grid).tau for p in phases]
    prefix_phases = [phases[0]]
    for j in range(2, len(phases) + 1):
        chain = PhaseChain(phases[:j], taus[:j])
        prefix_phases.append(multiproduct(chain, grid, tol=tol))

    inverses = [invert_Iphi(p, grid, basis) for p in prefix_phases]
    r_factors = []
    prev_iphi = identity_matrix(grid)
    for j, (factor, inv) in enumerate(zip(factors, inverses)):
        r = prev_iphi @ factor @ inv.qstar_left
        r_factors.append(r)
        prev_iphi = op_matrix("type1", 1.0, prefix_phases[j], grid)

    recomposed = r_factors[0]
    for r in r_factors[1:]:
        recomposed = recomposed @ r
    recomposed = recomposed @ op_matrix("type1", 1.0, prefix_phases[-1], grid)

    scale = max(measure_basis.subspace_norm(A), 1e-300)
    resid = measure_basis.subspace_norm(
        OperatorMatrix(A.matrix - recomposed.matrix, grid)) / scale

    # measured counterpart of the seminorm product inequality
    total_phase = prefix_phases[-1]
    x_probe, xi_probe, p = extract_symbol(A, total_phase, grid)
    m_tot = sum(a.m for a in symbols)
    mu_tot = sum(a.mu for a in symbols)
    wx = angle_weight(x_probe) ** (-m_tot)
    wxi = angle_weight(xi_probe) ** (-mu_tot)
    extracted_seminorm = float(np.max(np.abs(p) * wx[:, None] * wxi[None, :]))
    factor_norms = []
    X, XI = grid.meshes()
    for a in symbols:
        vals = np.abs(a.eval(X, XI))
        factor_norms.append(float(np.max(
            vals * angle_weight(X) ** (-a.m) * angle_weight(XI) ** (-a.mu))))
    product_of_norms = float(np.prod(factor_norms))
    report = {
        "factorization_residual": float(resid),
        "extracted_seminorm": extracted_seminorm,
        "factor_seminorms": factor_norms,
        "fitted_C0": extracted_seminorm / max(product_of_norms, 1e-300),
        "inverse_residuals": [inv.residual for inv in inverses],
        "tau_sum": float(sum(taus)),
    }
    return total_phase, A, report


# ---------------------------------------------------------------------------
# First-order expansion check


def first_order_expansion_check(p: SgSymbol, a: SgSymbol, phi,
                                grid=None, lambdas=(4.0, 8.0, 16.0),
                                envelope_sigma=1.0):
    """Residual decay of Op(p) Op_phi(a) - Op_phi(p(x, phi'_x) a) under
    frequency rescaling of Gaussian test functions.

    The xi-range must exceed max(lambdas) plus the envelope bandwidth; the
    default grid takes care of that.
    """
    if grid is None:
        grid = SampleGrid(12.0, 24.0, 256, 512)
    if grid.lxi < max(lambdas) + 6.0:
        raise QuantizeError("xi-range too small for the requested rescaling")
    mp = op_matrix("pseudo", p, None, grid)
    ma = op_matrix("type1", a, phi, grid)

    def c_tilde(X, XI):
        return (p.eval(X, phi.d(X, XI, 1, 0))
                * a.eval(X, XI)).astype(complex)

    mc = op_matrix("type1", c_tilde, phi, grid)
    D = mp.matrix @ ma.matrix - mc.matrix
    x = grid.x
    base = np.exp(-x * x / (2.0 * envelope_sigma ** 2))
    ratios = []
    for lam in lambdas:
        u = base * np.exp(1j * lam * x)
        ratios.append(float(np.linalg.norm(D @ u) / np.linalg.norm(u)))
    logs = np.log(np.maximum(ratios, 1e-300))
    slope = float(np.polyfit(np.log(lambdas), logs, 1)[0])
    return {"lambdas": list(lambdas), "ratios": ratios, "slope": slope}
