import numpy as np
import pytest

from sgfio.symbols import (SampleGrid, SgSymbol, angle_weight, check_elliptic,
                           check_order, seminorm, SymbolError)


def brute_force_seminorm_xxi(grid):
    """Independent oracle for the order-(1,1) seminorm of x*xi up to two
    derivatives: the five nonzero derivative branches are written out by
    hand and weighted straight from the definition."""
    X, XI = np.meshgrid(grid.x, grid.xi, indexing="ij")
    wx, wxi = angle_weight(X), angle_weight(XI)
    best = 0.0
    # (beta alpha) -> |d_xi^alpha d_x^beta (x xi)|
    branches = {
        (0, 0): np.abs(X * XI),
        (1, 0): np.abs(XI),
        (0, 1): np.abs(X),
        (1, 1): np.ones_like(X),
        (2, 0): np.zeros_like(X),
        (0, 2): np.zeros_like(X),
    }
    for (beta, alpha), vals in branches.items():
        weighted = vals * wx ** (beta - 1) * wxi ** (alpha - 1)
        best = max(best, float(weighted.max()))
    return best


def test_seminorm_constant_symbol(grid44):
    one = SgSymbol("1.0", (0.0, 0.0))
    for l in (0, 1, 2):
        assert seminorm(one, l, 0.0, 0.0, grid44) == 1.0


def test_seminorm_ang_xi(grid44, ang_xi):
    assert seminorm(ang_xi, 0, 0.0, 1.0, grid44) == pytest.approx(1.0, abs=1e-14)


def test_seminorm_xxi_matches_brute_force(grid44):
    a = SgSymbol("x*xi", (1.0, 1.0))
    expected = brute_force_seminorm_xxi(grid44)
    got = seminorm(a, 2, 1.0, 1.0, grid44)
    assert got == pytest.approx(expected, rel=1e-14)
    # regression baseline: the mixed derivative saturates the weight
    assert got == pytest.approx(1.0, rel=1e-12)


def test_seminorm_monotone_in_order(grid44):
    a = SgSymbol("exp(sin(x))*ang(xi)", (0.0, 1.0))
    values = [seminorm(a, l, 0.0, 1.0, grid44) for l in range(4)]
    assert all(values[i] <= values[i + 1] + 1e-15 for i in range(3))


def test_seminorm_never_decreases_under_refinement(grid44):
    a = SgSymbol("x*xi + sin(3*x)*ang(xi)", (1.0, 1.0))
    coarse = seminorm(a, 2, 1.0, 1.0, grid44)
    fine = seminorm(a, 2, 1.0, 1.0, grid44.refined())
    assert fine >= coarse - 1e-12


def test_seminorm_scaling_exact(grid44):
    a = SgSymbol("sin(x)*ang(xi)", (0.0, 1.0))
    base = seminorm(a, 2, 0.0, 1.0, grid44)
    scaled = seminorm(a.scaled(-3.5), 2, 0.0, 1.0, grid44)
    assert scaled == 3.5 * base


def test_seminorm_rejects_orders_beyond_cap(grid44):
    a = SgSymbol("x*xi", (1.0, 1.0), derivative_cap=2)
    with pytest.raises(SymbolError):
        seminorm(a, 3, 1.0, 1.0, grid44)


def test_check_order_ang_xi(grid44, ang_xi):
    assert check_order(ang_xi, 0.0, 1.0, 0, grid44, 1.01).ok
    wide = SampleGrid(4.0, 100.0, 33, 201)
    report = check_order(ang_xi, 0.0, 0.0, 0, wide, 10.0)
    assert not report.ok
    assert abs(report.worst["xi"]) == pytest.approx(100.0)


def test_check_order_exp_sin(grid44):
    a = SgSymbol("exp(sin(x))*ang(xi)", (0.0, 1.0))
    value = seminorm(a, 0, 0.0, 1.0, grid44)
    assert value == pytest.approx(np.e, rel=2e-3)  # grid misses sin = 1
    assert check_order(a, 0.0, 1.0, 0, grid44, value * 1.0001).ok


def test_product_order_law(grid44):
    # orders add under multiplication; membership at the summed order
    cases = [
        ("x*xi", (1.0, 1.0), "ang(xi)", (0.0, 1.0)),
        ("ang(x)", (1.0, 0.0), "1/ang(xi)", (0.0, -1.0)),
    ]
    for ea, (ma, mua), eb, (mb, mub) in cases:
        prod = SgSymbol(f"({ea})*({eb})", (ma + mb, mua + mub))
        bound = seminorm(prod, 2, ma + mb, mua + mub, grid44)
        assert np.isfinite(bound)
        assert check_order(prod, ma + mb, mua + mub, 2, grid44,
                           bound * 1.0001).ok


def test_elliptic_examples(grid44):
    both = SgSymbol("ang(x)*ang(xi)", (1.0, 1.0))
    report = check_elliptic(both, 1.0, 1.0, 0.0, grid44)
    assert report.ok and report.value == pytest.approx(1.0, abs=1e-14)

    degenerate = SgSymbol("x*xi", (1.0, 1.0))
    report = check_elliptic(degenerate, 1.0, 1.0, 1.0, grid44)
    assert not report.ok  # vanishes on the axes

    shifted = SgSymbol("ang(xi) + sin(x)", (0.0, 1.0))
    report = check_elliptic(shifted, 0.0, 1.0, 2.0, grid44)
    assert report.ok
    # oracle: direct minimum of |a| / ang(xi) outside the radius
    X, XI = grid44.meshes()
    mask = np.abs(X) + np.abs(XI) >= 2.0
    vals = np.abs(np.sqrt(1 + XI**2) + np.sin(X)) / np.sqrt(1 + XI**2)
    assert report.value == pytest.approx(float(vals[mask].min()), rel=1e-14)


def test_elliptic_grid_too_small(grid44):
    a = SgSymbol("ang(x)", (1.0, 0.0))
    with pytest.raises(SymbolError):
        check_elliptic(a, 1.0, 0.0, 50.0, grid44)


def test_symbol_self_check(ang_xi):
    assert ang_xi.self_check()


def test_derivative_oracle_zero_order_is_eval(grid44, ang_xi):
    X, XI = grid44.meshes()
    assert np.array_equal(ang_xi.eval(X, XI), ang_xi.deriv(X, XI))


def test_time_dependent_symbol():
    a = SgSymbol("(t - s)*ang(xi)", (0.0, 1.0))
    assert a.eval(0.0, 0.0, t=0.3, s=0.1) == pytest.approx(0.2)
    assert a.deriv(0.0, 0.0, dt=1, t=0.3, s=0.1) == pytest.approx(1.0)
    assert a.deriv(0.0, 0.0, ds=1, t=0.3, s=0.1) == pytest.approx(-1.0)


def test_grid_validation():
    with pytest.raises(SymbolError):
        SampleGrid(4.0, 4.0, 1, 65)
    with pytest.raises(SymbolError):
        SampleGrid(0.0, 4.0, 65, 65)


def test_grid_padding_covers_range(grid44):
    padded = grid44.padded(1.5)
    assert padded.lx == pytest.approx(5.5)
    assert padded.nx > grid44.nx
    assert padded.dx == pytest.approx(grid44.dx, rel=0.2)


from hypothesis import given, settings, strategies as st

_reals = st.floats(min_value=-50.0, max_value=50.0, allow_nan=False)


@settings(max_examples=300, deadline=None)
@given(_reals, _reals)
def test_weight_subadditive_under_shifts(a, b):
    # ang(a + b) <= ang(a) + |b|, the workhorse shift inequality
    assert angle_weight(a + b) <= angle_weight(a) + abs(b) + 1e-12


@settings(max_examples=300, deadline=None)
@given(_reals, st.floats(min_value=0.0, max_value=0.99, allow_nan=False))
def test_weight_comparable_under_small_shifts(a, k):
    # |b| <= k ang(a) pins ang(a + b) between (1 -+ k) ang(a)
    wa = float(angle_weight(a))
    for b in (k * wa, -k * wa, 0.5 * k * wa):
        wab = float(angle_weight(a + b))
        assert (1.0 - k) * wa <= wab + 1e-12
        assert wab <= (1.0 + k) * wa + 1e-12
