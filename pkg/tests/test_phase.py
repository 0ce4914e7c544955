import math

import numpy as np
import pytest

from sgfio.phase import (ExprPhase, GridPhase, IDENTITY_PHASE, certify_regular,
                         j_seminorm, j_sup2)
from sgfio.symbols import angle_weight


def oracle_weighted_sups(j_values_fn, grid, orders):
    """Independent evaluation of weighted J-derivative sups: closed-form
    derivative arrays in, one grid sup per order out."""
    X, XI = grid.meshes()
    wx, wxi = angle_weight(X), angle_weight(XI)
    out = {}
    for (dx, dxi) in orders:
        vals = np.abs(j_values_fn(dx, dxi, X, XI))
        out[(dx, dxi)] = float(np.max(vals * wx ** (dx - 1) * wxi ** (dxi - 1)))
    return out


ALL_ORDERS_2 = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]


def test_identity_phase_seminorms_zero(grid44):
    assert j_seminorm(IDENTITY_PHASE, 0, grid44) == (0.0, 0.0)


def test_linear_j_seminorm(grid44):
    # J = 0.05 xi: only the value and the xi-derivative contribute
    phi = ExprPhase("x*xi + 0.05*xi")

    def j_oracle(dx, dxi, X, XI):
        if (dx, dxi) == (0, 0):
            return 0.05 * XI
        if (dx, dxi) == (0, 1):
            return 0.05 * np.ones_like(X)
        return np.zeros_like(X)

    sups = oracle_weighted_sups(j_oracle, grid44, ALL_ORDERS_2)
    expected_low = max(sups[(0, 0)], sups[(1, 0)], sups[(0, 1)])
    two, full = j_seminorm(phi, 0, grid44)
    assert two == pytest.approx(sum(sups[o] for o in ALL_ORDERS_2 if sum(o) == 2),
                                abs=1e-15)
    assert two == 0.0
    assert full == pytest.approx(expected_low, abs=1e-15)
    assert full == pytest.approx(0.05, abs=1e-15)


def test_exponential_stretch_j_seminorm(grid44):
    # J = x xi (e^{0.1} - 1), closed form throughout
    c = math.exp(0.1) - 1.0
    phi = ExprPhase("x*xi*exp(t - s)", t=0.1, s=0.0)

    def j_oracle(dx, dxi, X, XI):
        if (dx, dxi) == (0, 0):
            return c * X * XI
        if (dx, dxi) == (1, 0):
            return c * XI
        if (dx, dxi) == (0, 1):
            return c * X
        if (dx, dxi) == (1, 1):
            return c * np.ones_like(X)
        return np.zeros_like(X)

    sups = oracle_weighted_sups(j_oracle, grid44, ALL_ORDERS_2)
    two, full = j_seminorm(phi, 0, grid44)
    assert two == pytest.approx(sups[(1, 1)], rel=1e-12)
    expected_full = max(sups[(0, 0)], sups[(1, 0)], sups[(0, 1)]) + two
    assert full == pytest.approx(expected_full, rel=1e-12)
    # the class parameter is the sup over all orders up to two: exactly c
    assert j_sup2(phi, grid44) == pytest.approx(c, rel=1e-12)


def test_j_seminorm_absolutely_homogeneous(grid44):
    base = "0.1*sin(x)*ang(xi)"
    phi1 = ExprPhase(f"x*xi + {base}")
    phi3 = ExprPhase(f"x*xi + 3.0*({base})")
    two1, full1 = j_seminorm(phi1, 1, grid44)
    two3, full3 = j_seminorm(phi3, 1, grid44)
    assert two3 == pytest.approx(3.0 * two1, rel=1e-13)
    assert full3 == pytest.approx(3.0 * full1, rel=1e-13)


def test_certify_identity_bit_exact(grid44):
    cert = certify_regular(IDENTITY_PHASE, grid44)
    assert cert.r == 1.0
    assert cert.tau == 0.0
    assert cert.phase_class == "P_r(tau,ell)"


def test_certify_translation(grid44):
    cert = certify_regular(ExprPhase("x*xi + 0.05*xi"), grid44)
    assert cert.r == 1.0
    assert cert.tau == pytest.approx(0.05, abs=1e-15)


def test_certify_eikonal_phase_linear_in_time(grid44, ang_xi):
    from sgfio.eikonal import solve_eikonal
    dt = 0.05
    phi = solve_eikonal(ang_xi, dt, 0.0, grid44)
    cert = certify_regular(phi, grid44)
    # tau <= c dt with c >= 1 of modest size
    assert cert.tau <= 2.0 * dt
    assert cert.tau >= 0.5 * dt
    assert cert.phase_class == "P_r(tau,ell)"


def test_small_tau_forces_mixed_hessian_lower_bound(grid44):
    # |phi''_{x xi}| >= 1 - tau when tau is small
    for text in ("x*xi + 0.05*xi", "x*xi + 0.03*sin(x)*ang(xi)",
                 "x*xi + 0.02*x*xi/ang(x)"):
        phi = ExprPhase(text)
        cert = certify_regular(phi, grid44)
        assert cert.tau < 0.25
        assert cert.r >= 1.0 - cert.tau - 1e-12


def test_band_check_fails_for_non_phase(grid44):
    # phi = x*xi^3 has phi'_x = xi^3, far outside the comparability band
    cert = certify_regular(ExprPhase("x*xi^3"), grid44)
    assert cert.phase_class == "fail"
    assert not cert.band_ok


def test_certificate_serializes(grid44):
    import json
    cert = certify_regular(ExprPhase("x*xi + 0.03*xi"), grid44)
    data = json.loads(cert.to_json())
    assert data["class"] == "P_r(tau,ell)"
    assert data["r"] == 1.0
    assert set(data) >= {"r", "tau", "ell", "class"}


def test_grid_phase_reproduces_expression_phase(grid44):
    # build a GridPhase by sampling an expression phase, compare derivatives
    expr_phi = ExprPhase("x*xi + 0.1*sin(x)*ang(xi)")
    X, XI = grid44.meshes()
    gp = GridPhase(grid44, expr_phi.value(X, XI), expr_phi.d(X, XI, 1, 0),
                   expr_phi.d(X, XI, 0, 1))
    pts_x = np.array([-2.3, 0.4, 1.7])
    pts_xi = np.array([-1.1, 0.2, 3.0])
    for dx, dxi in [(0, 0), (1, 0), (0, 1), (1, 1), (2, 0), (0, 2)]:
        exact = expr_phi.d(pts_x, pts_xi, dx, dxi)
        interp = gp.d(pts_x, pts_xi, dx, dxi)
        scale = max(1.0, float(np.max(np.abs(exact))))
        assert np.max(np.abs(exact - interp)) <= 2e-4 * scale


def test_j_derivatives_consistent_with_phase(grid44):
    phi = ExprPhase("x*xi + 0.05*cos(x)*ang(xi)")
    X, XI = grid44.meshes()
    assert np.allclose(phi.j(X, XI, 0, 0) + X * XI, phi.value(X, XI),
                       atol=1e-14)
    assert np.allclose(phi.j(X, XI, 1, 1), phi.d(X, XI, 1, 1) - 1.0,
                       atol=1e-14)
