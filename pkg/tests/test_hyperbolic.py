import numpy as np
import pytest

from sgfio.hyperbolic import (HyperbolicError, HyperbolicSystem, block_basis,
                              build_phases, coupling_block,
                              factorial_envelope_report, fd_weights,
                              iphi_matrix, le_residual_by_order,
                              picard_series, reference_solve, residual_W1,
                              semigroup_residual, simpson_weights,
                              solve_cauchy, telescoping_residual,
                              transport_system)
from sgfio.quantize import sobolev_norm, grid_function
from sgfio.symbols import SampleGrid, SgSymbol

GRID128 = SampleGrid(12.0, 12.0, 128, 128)
GRID96 = SampleGrid(12.0, 12.0, 96, 96)


@pytest.fixture(scope="module")
def transport_fs():
    sys_t = transport_system(c=0.5, grid=GRID128, t0=0.1, n_steps=8)
    tables = build_phases(sys_t)
    return sys_t, tables, picard_series(sys_t, tables)


@pytest.fixture(scope="module")
def coupled_system():
    l1 = SgSymbol("ang(xi)", (0.0, 1.0))
    l2 = SgSymbol("-ang(xi)", (0.0, 1.0))
    r = SgSymbol("0.1/ang(x)", (-1.0, 0.0))
    sys2 = HyperbolicSystem([l1, l2], [[None, r], [r, None]], eps=1.0,
                            t0=0.1, n_steps=8, grid=GRID96)
    tables = build_phases(sys2)
    return sys2, tables, picard_series(sys2, tables)


def test_simpson_weights_integrate_cubics():
    # the composite rules are exact on cubics for every interval count
    dt = 0.1
    for n in range(1, 9):
        w = simpson_weights(n, dt)
        nodes = dt * np.arange(n + 1)
        for k in range(4 if n >= 2 else 2):
            exact = (nodes[-1]) ** (k + 1) / (k + 1)
            assert np.sum(w * nodes ** k) == pytest.approx(exact, rel=1e-12)


def test_simpson_weights_zero_intervals():
    assert np.all(simpson_weights(0, 0.1) == 0.0)


def test_fd_weights_reproduce_centered_stencil():
    w = fd_weights((-2, -1, 0, 1, 2))
    assert np.allclose(w, [1 / 12, -8 / 12, 0, 8 / 12, -1 / 12])


def test_transport_w1_vanishes(transport_fs):
    sys_t, tables, fs = transport_fs
    Bb, _ = block_basis(sys_t)
    w1 = residual_W1(tables, 4, 0)
    assert np.linalg.norm(w1 @ Bb, 2) <= 1e-4


def test_w1_reduces_to_coupling_term():
    # lambda = c xi with a plain multiplier coupling: only R survives
    r0 = SgSymbol("0.2/ang(x)", (-1.0, 0.0))
    lam = SgSymbol("0.5*xi", (0.0, 1.0))
    sys_r = HyperbolicSystem([lam], [[r0]], eps=1.0, t0=0.1, n_steps=8,
                             grid=GRID96)
    tables = build_phases(sys_r)
    Bb, _ = block_basis(sys_r)
    w1 = residual_W1(tables, 4, 0)
    expected = -1j * (coupling_block(tables, 4) @ iphi_matrix(tables, 4, 0))
    assert np.linalg.norm((w1 - expected) @ Bb, 2) <= 1e-4


def test_transport_closed_form(transport_fs):
    sys_t, _, fs = transport_fs
    x = sys_t.grid.x
    g0 = np.exp(-x ** 2 / 2)[None, :]
    traj = solve_cauchy(fs, g0)
    exact = np.exp(-(x - 0.05) ** 2 / 2)
    rel = np.linalg.norm(traj[-1][0] - exact) / np.linalg.norm(exact)
    assert rel <= 1e-3


def test_dilation_closed_form():
    lam = SgSymbol("x*xi", (1.0, 1.0))
    sysd = HyperbolicSystem([lam], None, eps=1.0, t0=0.1, n_steps=8,
                            grid=GRID128)
    tables = build_phases(sysd)
    fs = picard_series(sysd, tables)
    x = GRID128.x
    g0 = np.exp(-x ** 2 / 2)[None, :]
    traj = solve_cauchy(fs, g0)
    exact = np.exp(-(x * np.exp(-0.1)) ** 2 / 2)
    rel = np.linalg.norm(traj[-1][0] - exact) / np.linalg.norm(exact)
    assert rel <= 1e-2


def test_diagonal_pairs_are_exact_identity(transport_fs):
    sys_t, _, fs = transport_fs
    eye = np.eye(sys_t.block_dim(), dtype=complex)
    for i in range(sys_t.n_steps + 1):
        assert np.array_equal(fs.E[(i, i)], eye)


def test_picard_series_decays(transport_fs):
    _, _, fs = transport_fs
    norms = fs.order_norms
    assert norms[1] < norms[0]


def test_factorial_envelope_stable():
    lam = SgSymbol("0.5*xi", (0.0, 1.0))
    r0 = SgSymbol("0.2/ang(x)", (-1.0, 0.0))
    sys_r = HyperbolicSystem([lam], [[r0]], eps=1.0, t0=0.1, n_steps=8,
                             grid=GRID96)
    fs = picard_series(sys_r, build_phases(sys_r))
    rep = factorial_envelope_report(fs)
    assert len(rep["envelope_constants"]) >= 2
    assert rep["spread"] <= 3.0


def test_telescoping_identity(coupled_system):
    _, _, fs = coupled_system
    res, scale = telescoping_residual(fs, 6, 0)
    assert res <= 1e-3


def test_le_residual_decreases_then_matches(coupled_system):
    _, _, fs = coupled_system
    rep = le_residual_by_order(fs, 4)
    norms = rep["le_norms_by_order"]
    assert norms[1] < norms[0]
    assert rep["final_order_gap"] <= 1e-3


def test_semigroup_property(coupled_system):
    _, _, fs = coupled_system
    assert semigroup_residual(fs, 8, 4, 0) <= 1e-2
    assert semigroup_residual(fs, 6, 3, 1) <= 1e-2


def test_coupled_system_matches_reference(coupled_system):
    sys2, _, fs = coupled_system
    x = sys2.grid.x
    g0 = np.stack([np.exp(-x ** 2 / 2), 0.5 * np.exp(-(x - 1) ** 2 / 2)])
    traj = solve_cauchy(fs, g0)
    ref = reference_solve(sys2, g0)
    rel = np.linalg.norm(traj[-1] - ref[-1]) / np.linalg.norm(ref[-1])
    assert rel <= 1e-2


def test_duhamel_with_forcing(transport_fs):
    sys_t, _, fs = transport_fs
    x = sys_t.grid.x
    g0 = np.exp(-x ** 2 / 2)[None, :]
    f_profile = 0.3 * np.exp(-x ** 2 / 4)[None, :]

    def forcing(k):
        return f_profile

    traj = solve_cauchy(fs, g0, forcing=forcing)
    ref = reference_solve(sys_t, g0, forcing=forcing)
    rel = np.linalg.norm(traj[-1] - ref[-1]) / np.linalg.norm(ref[-1])
    assert rel <= 1e-2


def test_reference_energy_conservation():
    # skew generator: R = 0 and real x-independent lambda conserve energy
    lam = SgSymbol("ang(xi)", (0.0, 1.0))
    sys_e = HyperbolicSystem([lam], None, eps=1.0, t0=0.1, n_steps=8,
                             grid=GRID96)
    x = GRID96.x
    traj = reference_solve(sys_e, np.exp(-x ** 2 / 2)[None, :])
    n0 = np.linalg.norm(traj[0])
    n1 = np.linalg.norm(traj[-1])
    assert abs(n1 - n0) / n0 <= 1e-6


def test_reference_self_convergence_order():
    lam = SgSymbol("ang(xi) + 0.1*sin(x)*ang(xi)", (0.0, 1.0))
    sys_c = HyperbolicSystem([lam], None, eps=1.0, t0=0.1, n_steps=4,
                             grid=GRID96)
    x = GRID96.x
    g0 = np.exp(-x ** 2 / 2)[None, :]
    fine = reference_solve(sys_c, g0, substeps=16)
    errs = []
    for sub in (2, 4):
        traj = reference_solve(sys_c, g0, substeps=sub)
        errs.append(np.linalg.norm(traj[-1] - fine[-1]))
    slope = np.log(errs[0] / errs[1]) / np.log(2.0)
    assert slope >= 3.5


def test_wellposedness_norm_ratios(coupled_system):
    # eps = 1: weighted Sobolev ratios stay bounded with no index shift
    sys2, _, fs = coupled_system
    x = sys2.grid.x
    g0 = np.stack([np.exp(-x ** 2 / 2), np.zeros_like(x)])
    traj = solve_cauchy(fs, g0)
    for r, rho in ((0.0, 0.0), (1.0, 1.0)):
        num = max(sobolev_norm(grid_function(lambda _:
                  traj[-1][c], sys2.grid), r, rho) for c in range(2))
        den = sobolev_norm(grid_function(lambda _: g0[0], sys2.grid), r, rho)
        assert num / den <= 2.0


def test_decay_gain_for_bounded_coefficients():
    # eps = 0: order-(0,1) generator, solution keeps one extra x-weight
    lam = SgSymbol("0.5*xi", (0.0, 1.0))
    sys0 = HyperbolicSystem([lam], None, eps=0.0, t0=0.1, n_steps=8,
                            grid=GRID96)
    fs = picard_series(sys0, build_phases(sys0))
    x = GRID96.x
    g0 = np.exp(-x ** 2 / 2)[None, :]
    traj = solve_cauchy(fs, g0)
    out = grid_function(lambda _: traj[-1][0], sys0.grid)
    src = grid_function(lambda _: g0[0], sys0.grid)
    # r - (eps - 1) = r + 1 with r = 0
    assert sobolev_norm(out, 1.0, 0.0) / sobolev_norm(src, 0.0, 0.0) <= 2.0


def test_series_blowup_guard():
    # sabotage: a horizon far beyond the contraction regime must abort
    lam = SgSymbol("0.5*xi", (0.0, 1.0))
    r0 = SgSymbol("40.0/ang(x)", (-1.0, 0.0))
    bad = HyperbolicSystem([lam], [[r0]], eps=1.0, t0=0.4, n_steps=8,
                           grid=GRID96)
    with pytest.raises(HyperbolicError):
        picard_series(bad, build_phases(bad), n_cap=6)


def test_system_validation():
    lam = SgSymbol("xi", (0.0, 1.0))
    with pytest.raises(HyperbolicError):
        HyperbolicSystem([], None, eps=1.0, t0=0.1, n_steps=8, grid=GRID96)
    with pytest.raises(HyperbolicError):
        HyperbolicSystem([lam], [[None, None]], eps=1.0, t0=0.1, n_steps=8,
                         grid=GRID96)
    with pytest.raises(HyperbolicError):
        HyperbolicSystem([lam], None, eps=1.0, t0=-0.1, n_steps=8,
                         grid=GRID96)


def test_w1_step_check_clean_for_fine_grid(coupled_system):
    from sgfio.hyperbolic import w1_step_check
    sys2, tables, _ = coupled_system
    rep = w1_step_check(tables, 4, 0)
    assert not rep["truncation_dominates"]
    assert rep["stencil_gap"] <= 0.1 * rep["w1_norm"]
