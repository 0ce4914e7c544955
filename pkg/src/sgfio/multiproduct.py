"""Multi-products of regular phase functions via the contraction fixed point.

For a chain phi_1, ..., phi_{M+1} with parameters tau_j summing below 1/4,
the critical point of the intermediate variables solves, in the difference
unknowns (y_k, eta_k),

    y_k   = J'_{k,xi}(x + z^{k-1}, xi + zeta^k),      k = 1..M,
    eta_k = J'_{k+1,x}(x + z^k,   xi + zeta^{k+1}),   k = 1..M,

with z^j the leading partial sums of y and zeta^j the trailing partial
sums of eta.  The iteration map is a contraction of rate 3*tau_0 in the
weighted norm sum_k(|y_k|/ang(x) + |eta_k|/ang(xi)), so plain fixed-point
iteration from zero converges for every node independently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .phase import GridPhase, certify_regular
from .symbols import SampleGrid, angle_weight


class ChainError(Exception):
    pass


class FixedPointError(Exception):
    pass


@dataclass
class PhaseChain:
    """Ordered phases with certified parameters; admissible if sum < 1/4."""

    phases: list
    taus: list

    def __post_init__(self):
        if len(self.phases) < 2:
            raise ChainError("a chain needs at least two phases")
        if len(self.taus) != len(self.phases):
            raise ChainError("one tau per phase required")
        if any(t < 0 for t in self.taus):
            raise ChainError("tau parameters must be non-negative")
        if self.tau0 >= 0.25:
            raise ChainError(
                f"chain not admissible: sum of tau = {self.tau0:.4f} >= 1/4")

    @classmethod
    def from_phases(cls, phases, cert_grid: SampleGrid, ell=0):
        taus = [certify_regular(p, cert_grid, ell).tau for p in phases]
        return cls(list(phases), taus)

    @property
    def m_products(self):
        """M: the number of intermediate variables."""
        return len(self.phases) - 1

    @property
    def tau0(self):
        return float(sum(self.taus))

    def tau_bar(self, k):
        """Partial sum tau_1 + ... + tau_k."""
        return float(sum(self.taus[:k]))


@dataclass
class CriticalPoint:
    """Solution of the critical-point system at one or many (x, xi).

    Arrays have shape (M,) + shape(x).  Y and N are reconstructed from
    the difference unknowns, so Y_j = x + z^j and N_j = xi + zeta^j hold
    exactly by construction.
    """

    x: np.ndarray
    xi: np.ndarray
    y: np.ndarray
    eta: np.ndarray
    iterations: int
    residual: float
    update_ratios: list = field(default_factory=list)

    @property
    def z(self):
        return np.cumsum(self.y, axis=0)

    @property
    def zeta(self):
        return np.cumsum(self.eta[::-1], axis=0)[::-1]

    @property
    def Y(self):
        return self.x[None, ...] + self.z

    @property
    def N(self):
        return self.xi[None, ...] + self.zeta


def _sigma_norm(y, eta, wx, wxi):
    return np.sum(np.abs(y), axis=0) / wx + np.sum(np.abs(eta), axis=0) / wxi


def _iterate_once(chain, x, xi, y, eta):
    M = chain.m_products
    z = np.cumsum(y, axis=0)
    zeta = np.cumsum(eta[::-1], axis=0)[::-1]
    y_new = np.empty_like(y)
    eta_new = np.empty_like(eta)
    for k in range(1, M + 1):
        zk_minus = z[k - 2] if k >= 2 else np.zeros_like(x)
        zetak = zeta[k - 1]
        y_new[k - 1] = chain.phases[k - 1].j(x + zk_minus, xi + zetak, 0, 1)
        zk = z[k - 1]
        zetak_plus = zeta[k] if k < M else np.zeros_like(xi)
        eta_new[k - 1] = chain.phases[k].j(x + zk, xi + zetak_plus, 1, 0)
    return y_new, eta_new


def solve_critical(chain: PhaseChain, x, xi, tol=1e-12, max_iter=200,
                   start=None):
    """Fixed point of the contraction map at (x, xi); x, xi may be arrays.

    Starts from the zero vector (or `start`), stops when the weighted norm
    of the update drops below tol, and verifies the stated a priori bounds
    at the solution.
    """
    x = np.asarray(x, float)
    xi = np.asarray(xi, float)
    shape = np.broadcast_shapes(x.shape, xi.shape)
    x = np.broadcast_to(x, shape).copy()
    xi = np.broadcast_to(xi, shape).copy()
    M = chain.m_products
    if start is None:
        y = np.zeros((M,) + shape)
        eta = np.zeros((M,) + shape)
    else:
        y = np.array(start[0], float).reshape((M,) + shape).copy()
        eta = np.array(start[1], float).reshape((M,) + shape).copy()

    wx = angle_weight(x)
    wxi = angle_weight(xi)
    ratios = []
    prev_update = None
    for it in range(1, max_iter + 1):
        y_new, eta_new = _iterate_once(chain, x, xi, y, eta)
        update = float(np.max(_sigma_norm(y_new - y, eta_new - eta, wx, wxi)))
        if prev_update is not None and prev_update > 0:
            ratios.append(update / prev_update)
        prev_update = update
        y, eta = y_new, eta_new
        if update <= tol:
            break
    else:
        raise FixedPointError(
            f"no convergence after {max_iter} iterations "
            f"(last update {update:.3e}); the chain taus look mis-certified")

    y_chk, eta_chk = _iterate_once(chain, x, xi, y, eta)
    residual = float(np.max(_sigma_norm(y_chk - y, eta_chk - eta, wx, wxi)))
    return CriticalPoint(x=x, xi=xi, y=y, eta=eta, iterations=it,
                         residual=residual, update_ratios=ratios)


def check_bounds(chain, cp: CriticalPoint, slack=1e-9):
    """A priori bounds on the solution: fail loudly if any node violates

        |y_k| <= (4/3) tau_k ang(x),   |eta_k| <= (4/3) tau_{k+1} ang(xi),
        |z^j| <= ang(x)/3,             |zeta^j| <= ang(xi)/3.
    """
    wx = angle_weight(cp.x)
    wxi = angle_weight(cp.xi)
    report = {"ok": True, "violations": []}
    z = cp.z
    zeta = cp.zeta
    for k in range(1, chain.m_products + 1):
        bound_y = (4.0 / 3.0) * chain.taus[k - 1] * wx + slack * wx
        bound_eta = (4.0 / 3.0) * chain.taus[k] * wxi + slack * wxi
        for name, vals, bound in (("y", np.abs(cp.y[k - 1]), bound_y),
                                  ("eta", np.abs(cp.eta[k - 1]), bound_eta)):
            bad = vals > bound
            if np.any(bad):
                report["ok"] = False
                report["violations"].append(
                    {"bound": f"{name}_{k}", "count": int(np.sum(bad)),
                     "worst_excess": float(np.max(vals - bound))})
        for name, vals, w in (("z", np.abs(z[k - 1]), wx),
                              ("zeta", np.abs(zeta[k - 1]), wxi)):
            bad = vals > w / 3.0 + slack * w
            if np.any(bad):
                report["ok"] = False
                report["violations"].append(
                    {"bound": f"{name}^{k}", "count": int(np.sum(bad))})
    return report


def multiproduct(chain: PhaseChain, grid: SampleGrid, tol=1e-12):
    """The product phase of the chain, realized on the grid.

    The value at each node evaluates the defining sum at the critical
    point; first derivatives use the exact relations
    phi'_x = phi'_{1,x}(x, N_1) and phi'_xi = phi'_{M+1,xi}(Y_M, xi).
    """
    X, XI = grid.meshes()
    cp = solve_critical(chain, X, XI, tol=tol)
    bounds = check_bounds(chain, cp)
    if not bounds["ok"]:
        raise FixedPointError(f"a priori bounds violated: {bounds['violations']}")
    phi = multiproduct_value(chain, cp)
    phi_x = chain.phases[0].d(X, cp.N[0], 1, 0)
    phi_xi = chain.phases[-1].d(cp.Y[-1], XI, 0, 1)
    meta = {"kind": "multiproduct", "M": chain.m_products,
            "tau0": chain.tau0,
            "max_iterations": cp.iterations,
            "residual": cp.residual,
            "contraction_ratios": cp.update_ratios}
    out = GridPhase(grid, phi, phi_x, phi_xi, meta=meta)
    out.critical = cp
    return out


def multiproduct_value(chain, cp: CriticalPoint):
    """Evaluate the defining sum at a critical point."""
    M = chain.m_products
    Y = cp.Y
    N = cp.N
    total = np.zeros_like(cp.x)
    for j in range(1, M + 1):
        prev = cp.x if j == 1 else Y[j - 2]
        total += chain.phases[j - 1].value(prev, N[j - 1]) - Y[j - 1] * N[j - 1]
    total += chain.phases[M].value(Y[M - 1], cp.xi)
    return total


def det_bound_check(A, c0=None):
    """Determinant bound for a matrix with column-sum norm below one:

        (1 - c0)^n <= det(I - A) <= (1 + c0)^n.
    """
    A = np.asarray(A, float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("square matrix required")
    norm = float(np.max(np.sum(np.abs(A), axis=0)))
    if c0 is None:
        c0 = norm
    elif norm > c0:
        raise ValueError(f"column-sum norm {norm:.4f} exceeds c0 = {c0}")
    if c0 >= 1.0:
        raise ValueError("c0 must be below 1")
    n = A.shape[0]
    det = float(np.linalg.det(np.eye(n) - A))
    return (1.0 - c0) ** n <= det <= (1.0 + c0) ** n


def _interior_dx(values, dx):
    """Fourth-order centered x-derivative of a grid array (interior only)."""
    out = (-values[4:, :] + 8 * values[3:-1, :]
           - 8 * values[1:-3, :] + values[:-4, :]) / (12 * dx)
    return out


def _interior_dxi(values, dxi):
    out = (-values[:, 4:] + 8 * values[:, 3:-1]
           - 8 * values[:, 1:-3] + values[:, :-4]) / (12 * dxi)
    return out


def associativity_pair(chain: PhaseChain, grid: SampleGrid, tol=1e-12,
                       pad=1.0):
    """(phi1 # phi2) # phi3 and phi1 # (phi2 # phi3), computed independently.

    Inner products are built on a padded grid so the outer critical point
    never queries them outside their interpolation domain; their tau comes
    from a fresh certificate.
    """
    if chain.m_products != 2:
        raise ChainError("associativity pair needs exactly three phases")
    inner_grid = grid.padded(pad)
    cert_grid = inner_grid

    left_inner = multiproduct(PhaseChain(chain.phases[:2], chain.taus[:2]),
                              inner_grid, tol=tol)
    tau_li = certify_regular(left_inner, cert_grid).tau
    left = multiproduct(PhaseChain([left_inner, chain.phases[2]],
                                   [tau_li, chain.taus[2]]), grid, tol=tol)

    right_inner = multiproduct(PhaseChain(chain.phases[1:], chain.taus[1:]),
                               inner_grid, tol=tol)
    tau_ri = certify_regular(right_inner, cert_grid).tau
    right = multiproduct(PhaseChain([chain.phases[0], right_inner],
                                    [chain.taus[0], tau_ri]), grid, tol=tol)
    return left, right


def verify_structure(chain: PhaseChain, product: GridPhase, grid: SampleGrid,
                     tol=1e-12):
    """Measurements backing the structural theorems for one product.

    (a) the first-derivative relations, checked against fourth-order
        differences of the value grid (non-circular: the stored derivative
        grids come from the exact relations themselves);
    (b) associativity for three-phase chains, both association orders
        computed independently;
    (c) sampled difference-quotient checks of the y/eta derivative
        estimates at first order, with fitted constants;
    (d) a certificate for the product with the fitted class constant.
    """
    X, XI = grid.meshes()
    cp = product.critical if hasattr(product, "critical") else \
        solve_critical(chain, X, XI, tol=tol)
    report = {}

    # (a) derivative relations vs finite differences of the value grid
    rel_x = chain.phases[0].d(X, cp.N[0], 1, 0)
    rel_xi = chain.phases[-1].d(cp.Y[-1], XI, 0, 1)
    fd_x = _interior_dx(product.phi, grid.dx)
    fd_xi = _interior_dxi(product.phi, grid.dxi)
    report["deriv_x_discrepancy"] = float(
        np.max(np.abs(fd_x - rel_x[2:-2, :])))
    report["deriv_xi_discrepancy"] = float(
        np.max(np.abs(fd_xi - rel_xi[:, 2:-2])))

    # (b) associativity, M = 2 chains only (three phases)
    if chain.m_products == 2:
        left, right = associativity_pair(chain, grid, tol=tol)
        report["associativity_discrepancy"] = float(
            np.max(np.abs(left.phi - right.phi)))
        report["direct_vs_left_nested"] = float(
            np.max(np.abs(product.phi - left.phi)))

    # (c) first-order derivative estimates on the difference unknowns
    fitted = []
    wx = angle_weight(X)
    wxi = angle_weight(XI)
    for k in range(1, chain.m_products + 1):
        tau_k = max(chain.taus[k - 1], 1e-300)
        tau_k1 = max(chain.taus[k], 1e-300)
        y_k = cp.y[k - 1]
        eta_k = cp.eta[k - 1]
        consts = {
            "y_dx": np.max(np.abs(_interior_dx(y_k, grid.dx)) / tau_k),
            "y_dxi": np.max(np.abs(_interior_dxi(y_k, grid.dxi))
                            * wxi[:, 2:-2] / (tau_k * wx[:, 2:-2])),
            "eta_dx": np.max(np.abs(_interior_dx(eta_k, grid.dx))
                             * wx[2:-2, :] / (tau_k1 * wxi[2:-2, :])),
            "eta_dxi": np.max(np.abs(_interior_dxi(eta_k, grid.dxi))
                              / tau_k1),
        }
        fitted.append({k2: float(v) for k2, v in consts.items()})
    report["difference_derivative_constants"] = fitted

    # (d) certificate and the fitted class constant
    cert = certify_regular(product, grid)
    tau_bar = chain.tau_bar(len(chain.phases))
    report["certificate"] = {"r": cert.r, "tau": cert.tau,
                             "class": cert.phase_class}
    report["fitted_k"] = float(cert.tau / tau_bar) if tau_bar > 0 else 0.0
    report["k_times_tau0_below_one"] = bool(cert.tau < 1.0)
    return report
