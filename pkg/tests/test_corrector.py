from __future__ import annotations

import math

import numpy as np
import pytest

from pphom.coefficients import CoefficientSet
from pphom.constants import NormGrid, compute_constants, sample_norms, bound_shape, EtaChoices
from pphom.corrector import (
    CellFunctionField,
    SweepConfig,
    build_cutoff,
    error_norms,
    expansion_series,
    oscillation_check,
    psi_bound_check,
    reconstruct_expansion,
    run_sweep,
)
from pphom.expr import parse_expr as parse
from pphom.mesh import EXTERNAL, CellSpec, DomainSpec, build_cell_mesh, build_perforated_domain_mesh, build_square_mesh
from pphom.solvers import MacroCoefficients, TimeGrid, rothe_step, run_fine, run_macro


def scalar(**kw):
    return CoefficientSet.from_arrays(1, M=np.eye(1), E=np.eye(2), **kw)


def setup(eps, coeffs, hole=True, n=8, T=0.02, dt=0.01):
    spec = CellSpec("disk" if hole else "none", (0.5, 0.5), 0.25, n)
    cell = build_cell_mesh(spec)
    fine = build_perforated_domain_mesh(DomainSpec(eps), spec, cell)
    macro = build_square_mesh(int(round(1 / eps)) * n)
    grid = TimeGrid(T, dt)
    ft = run_fine(fine, coeffs, grid, eps)
    mt = run_macro(macro, MacroCoefficients(cell, coeffs, macro), coeffs, grid)
    return cell, fine, macro, ft, mt


def test_cutoff_values():
    m = build_square_mesh(20)
    cut = build_cutoff(m, 0.1)
    at = lambda p: cut.values[np.argmin(np.linalg.norm(m.nodes - p, axis=1))]  # noqa: E731
    assert at((0.5, 0.5)) == 1.0
    assert at((0.15, 0.5)) == pytest.approx(0.5)
    assert at((0.05, 0.5)) == 0.0 and at((0.1, 0.5)) == 0.0
    assert cut.thresholds == (0.1, 0.2)
    with pytest.raises(ValueError, match="inradius"):
        build_cutoff(m, 0.5)


def test_cutoff_gradient_scales_like_inverse_eps():
    spec = CellSpec("disk", (0.5, 0.5), 0.25, 8)
    cell = build_cell_mesh(spec)
    g = [build_cutoff(build_perforated_domain_mesh(DomainSpec(e), spec, cell), e).grad_bound for e in (1 / 4, 1 / 8, 1 / 16)]
    assert max(g) <= 1.1 * min(g)


def test_unperforated_constant_expansion_is_macro():
    c = scalar(H=np.ones(1), L=np.eye(1), G=np.eye(1))
    cell, fine, macro, ft, mt = setup(0.25, c, hole=False, n=4)
    cells = CellFunctionField(cell, c)
    for step in expansion_series(fine, mt, cells, 0.25, c):
        assert np.abs(step.V1).max() < 1e-12 and np.abs(step.V2).max() < 1e-12
        V, U = step.assemble(0.25, build_cutoff(fine, 0.25))
        assert np.array_equal(V, step.V0)


def test_initial_U_reproduced():
    c = CoefficientSet.from_entries({"M.11": "1", "E.11": "1", "E.22": "1", "H.1": "1", "L.11": "1", "G.11": "1",
                                     "U.1": "1 + x1 - 0.5*x2"}, 1)
    cell, fine, macro, ft, mt = setup(0.25, c)
    V, U = reconstruct_expansion(fine, mt, CellFunctionField(cell, c), 0.25, 0.0, c)
    exact = 1 + fine.nodes[:, 0] - 0.5 * fine.nodes[:, 1]
    assert np.abs(U[0] - exact).max() < 1e-12


def test_psi_recursion_exact_without_coupling():
    c = scalar(H=np.ones(1), L=np.eye(1), G=2 * np.eye(1))
    eps = 0.25
    cell, fine, macro, ft, mt = setup(eps, c, T=0.05, dt=0.01)
    cut = build_cutoff(fine, eps)
    steps = [s.assemble(eps, cut) for s in expansion_series(fine, mt, CellFunctionField(cell, c), eps, c)]
    psi = ft.states[0].U - steps[0][1]
    for k in range(len(steps) - 1):
        phi = ft.states[k].V - steps[k][0]
        psi = rothe_step(psi, phi, 0.01, np.eye(1), 2 * np.eye(1))
        assert np.abs(psi - (ft.states[k + 1].U - steps[k + 1][1])).max() < 1e-12


def test_error_norms():
    m = build_square_mesh(8)
    x = m.nodes[:, 0][None]
    z = np.zeros_like(x)
    assert error_norms(x, x, x, x, m) == (0.0, 0.0)
    phi, psi = error_norms(x, x, z, z, m)
    assert phi == pytest.approx(1.0, rel=1e-12)
    assert psi == pytest.approx(math.sqrt(1 / 3 + 1), rel=1e-12)
    with pytest.raises(ValueError):
        error_norms(x, x, z[:, :-1], z, m)


def test_phi_vanishes_on_outer_boundary():
    c = scalar(H=np.ones(1), L=np.eye(1), G=np.eye(1))
    cell, fine, macro, ft, mt = setup(0.25, c)
    V, _ = reconstruct_expansion(fine, mt, CellFunctionField(cell, c), 0.25, 0.02, c)
    bn = fine.boundary_nodes(EXTERNAL)
    assert np.abs(ft.final().V[0, bn] - V[0, bn]).max() == 0.0


def test_bound_envelope_shape():
    n = sample_norms(scalar(H=np.ones(1), K=0.5 * np.ones((1, 1)), L=np.eye(1), G=np.eye(1)), NormGrid(5))
    bc = compute_constants(n, EtaChoices(np.ones((2, 1, 1)), 0.2, 0.2))
    eps = np.array([1 / 4, 1 / 8, 1 / 16, 1 / 32])
    ts = np.linspace(0, 1, 11)
    vals = np.array([bound_shape(bc, eps, t) for t in ts])
    assert np.all(np.diff(vals, axis=0) >= 0)
    ratio = vals / np.sqrt(eps)
    assert np.all(ratio[:, -1] <= ratio[:, 0])  # bounded by the coarsest value


def test_psi_bound_check_margins():
    t = np.array([0.0, 0.1, 0.2])
    m = psi_bound_check(t, np.array([0.0, 0.1, 0.5]), np.array([1.0, 1.0, 1.0]), 0.0, 1.0)
    assert np.allclose(m, [0.0, 0.0, -0.3])


def test_sweep_flags():
    c = scalar(H=np.ones(1), L=np.eye(1), G=np.eye(1))
    one = run_sweep(SweepConfig([0.25], c, resolution=4, T=0.02, dt=0.01))
    assert one.slope_status == "insufficient points"
    flat = run_sweep(SweepConfig([0.5, 0.25, 0.125], c, hole_shape="none", resolution=2, T=0.02, dt=0.01,
                                 cutoff_multiplier=0.5))
    assert flat.slope_status == "degenerate"
    assert all(r.phi_norm < 1e-8 for r in flat.rows)


def test_failed_row_does_not_abort(tmp_path):
    c = scalar(H=np.ones(1), L=np.eye(1), G=np.eye(1))
    rep = run_sweep(SweepConfig([0.5, 0.25], c, resolution=4, T=0.02, dt=0.01))
    by_eps = {r.eps: r for r in rep.rows}
    assert by_eps[0.5].error and "inradius" in by_eps[0.5].error
    assert by_eps[0.25].ok and by_eps[0.25].phi_norm > 0
    rep.write_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0].startswith("# slope=") and lines[1].startswith("eps,phi_norm,psi_norm,bound,ratio,pair_rate")


def test_oscillation_cases():
    eps = [1 / 8, 1 / 16, 1 / 32]
    plain = oscillation_check(parse("x1*x2 + 1"), eps)
    assert all(r.difference < 1e-12 for r in plain)
    rows = oscillation_check(parse("sin(2*pi*y1)"), eps)
    assert rows[0].target == pytest.approx(0.0, abs=1e-14)
    for r in rows:
        oracle = r.eps / (2 * np.pi) * (1 - np.cos(2 * np.pi * 0.9 / r.eps))
        assert r.integral == pytest.approx(oracle, rel=1e-9, abs=1e-13)
    mixed = oscillation_check(parse("x1*cos(2*pi*y2)"), eps)
    assert all(abs(r.target) < 1e-12 for r in mixed)
