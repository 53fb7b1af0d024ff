from __future__ import annotations

import numpy as np
import pytest

from pphom import fem
from pphom.coefficients import CoefficientSet, CorrosionParams, corrosion_preset
from pphom.constants import NormGrid, energy_envelope, optimize_eta, sample_norms
from pphom.effective import tabulate
from pphom.linalg import SolverError
from pphom.mesh import EXTERNAL, CellSpec, DomainSpec, build_cell_mesh, build_perforated_domain_mesh, build_square_mesh
from pphom.solvers import (
    DerivativeRecovery,
    MacroCoefficients,
    TimeGrid,
    elliptic_solve_fine,
    rothe_step,
    run_fine,
    run_macro,
    write_manifest,
    write_trajectory_csv,
)


def scalar(**kw):
    return CoefficientSet.from_arrays(1, M=np.eye(1), E=np.eye(2), **kw)


def test_zero_data_zero_solution():
    m = build_square_mesh(4)
    V = elliptic_solve_fine(m, scalar(), np.zeros((1, m.n_nodes)), 0.0, 1.0)
    assert np.abs(V).max() == 0


def test_poisson_dense_oracle():
    m = build_square_mesh(4)  # 5 x 5 nodes
    V = elliptic_solve_fine(m, scalar(H=np.ones(1)), np.zeros((1, m.n_nodes)), 0.0, 1.0)[0]
    A = (fem.stiffness(m) + fem.mass(m)).toarray()
    b = fem.load(m, 1.0)
    bn = m.boundary_nodes(EXTERNAL)
    A[bn] = 0.0
    A[bn, bn] = 1.0
    b[bn] = 0.0
    assert np.max(np.abs(V - np.linalg.solve(A, b))) < 1e-9
    assert np.all(V[bn] == 0.0)


def test_manufactured_solution_order():
    c = CoefficientSet.from_entries({"M.11": "1", "E.11": "1", "E.22": "1",
                                     "H.1": "(1 + 2*pi^2)*sin(pi*x1)*sin(pi*x2)"}, 1)
    errs = []
    for n in (8, 16, 32):
        m = build_square_mesh(n)
        V = elliptic_solve_fine(m, c, np.zeros((1, m.n_nodes)), 0.0, 1.0)[0]
        exact = np.sin(np.pi * m.nodes[:, 0]) * np.sin(np.pi * m.nodes[:, 1])
        errs.append(fem.l2_norm(m, V - exact))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.8), orders


def test_rothe_cases():
    U = np.array([[1.0, 2.0]])
    V = np.ones((1, 2))
    assert np.array_equal(rothe_step(U, V, 0.1, np.zeros((1, 1)), np.zeros((1, 1))), U)
    u = np.ones((1, 1))
    for _ in range(10):
        u = rothe_step(u, np.zeros((1, 1)), 0.1, np.ones((1, 1)), np.zeros((1, 1)))
    assert u[0, 0] == pytest.approx(1.1**-10, rel=1e-14)
    u = np.zeros((1, 1))
    for _ in range(8):
        u = rothe_step(u, np.ones((1, 1)), 0.125, np.zeros((1, 1)), np.ones((1, 1)))
    assert u[0, 0] == pytest.approx(1.0, abs=1e-14)
    with pytest.raises(SolverError, match="singular"):
        rothe_step(np.ones((1, 1)), np.zeros((1, 1)), 1.0, -np.ones((1, 1)), np.zeros((1, 1)))


def test_rothe_first_order_in_dt():
    errs = []
    for k in (10, 20, 40):
        u = np.ones((1, 1))
        for _ in range(k):
            u = rothe_step(u, np.zeros((1, 1)), 1.0 / k, np.ones((1, 1)), np.zeros((1, 1)))
        errs.append(abs(u[0, 0] - np.exp(-1.0)))
    assert np.all(np.log2(np.array(errs[:-1]) / np.array(errs[1:])) > 0.9)


def test_zero_trajectory():
    m = build_square_mesh(4)
    tr = run_fine(m, scalar(L=np.eye(1), G=np.eye(1)), TimeGrid(0.1, 0.05), 1.0)
    assert all(np.abs(s.U).max() == 0 and np.abs(s.V).max() == 0 for s in tr.states)


def coupled():
    return scalar(H=np.ones(1), K=0.5 * np.ones((1, 1)), L=np.eye(1), G=np.eye(1))


def test_time_self_convergence():
    m = build_square_mesh(6)
    c = coupled()
    finals = [run_fine(m, c, TimeGrid(0.5, dt), 1.0).final().U for dt in (0.05, 0.025, 0.0125)]
    d1, d2 = np.abs(finals[0] - finals[1]).max(), np.abs(finals[1] - finals[2]).max()
    assert d1 > 0 and np.log2(d1 / d2) > 0.9


def test_decoupling_by_recomputation():
    m = build_square_mesh(6)
    c = coupled()
    grid = TimeGrid(0.2, 0.05)
    tr = run_fine(m, c, grid, 1.0)
    for k, st in enumerate(tr.states):
        V = elliptic_solve_fine(m, c, st.U, st.t, 1.0)
        assert np.abs(V - st.V).max() < 1e-10
        if k + 1 < len(tr.states):
            U = rothe_step(st.U, st.V, grid.dt, np.eye(1), np.eye(1))
            assert np.abs(U - tr.states[k + 1].U).max() < 1e-13


def test_degenerate_macro_equals_fine():
    c = coupled()
    eps = 0.25
    plain = CellSpec("none", resolution=4)
    cell = build_cell_mesh(plain)
    fine = build_perforated_domain_mesh(DomainSpec(eps), plain, cell)
    macro = build_square_mesh(16)
    assert np.array_equal(fine.nodes, macro.nodes)
    grid = TimeGrid(0.1, 0.05)
    a = run_fine(fine, c, grid, eps)
    b = run_macro(macro, MacroCoefficients(cell, c, macro), c, grid)
    for s, r in zip(a.states, b.states):
        assert np.abs(s.V - r.V).max() < 1e-9 and np.abs(s.U - r.U).max() < 1e-9


def test_macro_differs_from_naive_average():
    c = scalar(H=np.ones(1))
    cell = build_cell_mesh(CellSpec("disk", (0.5, 0.5), 0.25, 16))
    macro = build_square_mesh(16)
    grid = TimeGrid(0.05, 0.05)
    hom = run_macro(macro, MacroCoefficients(cell, c, macro), c, grid)
    eff = tabulate(cell, c, [(0.0, 0.5, 0.5)]).at(0)
    naive = dict(eff, E=eff["M"][0, 0] * np.eye(2))  # |Y*| E with E = I
    nav = run_macro(macro, MacroCoefficients.from_tensors(macro, c, naive), c, grid)
    gap = fem.l2_norm(macro, hom.final().V - nav.final().V)
    assert gap > 1e-3 * fem.l2_norm(macro, hom.final().V)


def test_corrosion_energy_envelope():
    c = corrosion_preset(CorrosionParams())
    bc = optimize_eta(sample_norms(c, NormGrid(9, 0.5)), "min_lambda_plus_mu")[1]
    m = build_square_mesh(8)
    tr = run_fine(m, c, TimeGrid(0.5, 0.01), 0.25, monitor=bc)
    t = np.array([row[0] for row in tr.energy])
    U_sq = np.array([row[1] for row in tr.energy]) ** 2
    env = energy_envelope(bc, U_sq[0], t, 1.0)
    assert np.all(U_sq <= env * (1 + 1e-9))
    assert all(lhs <= rhs * (1 + 1e-9) for _, lhs, rhs in tr.monitor)


def test_derivative_recovery_exact_for_quadratics():
    m = build_square_mesh(8)
    x, y = m.nodes.T
    g, h = DerivativeRecovery(m)(x * x + 3 * x * y - y)
    assert np.allclose(g[:, 0], 2 * x + 3 * y, atol=1e-6)
    assert np.allclose(g[:, 1], 3 * x - 1, atol=1e-6)
    assert np.allclose(h, [[2.0, 3.0], [3.0, 0.0]], atol=1e-5)


def test_outputs(tmp_path):
    m = build_square_mesh(4)
    tr = run_fine(m, coupled(), TimeGrid(0.1, 0.05), 1.0)
    paths = write_trajectory_csv(tr, tmp_path / "snap")
    assert len(paths) == 3
    data = np.loadtxt(paths[-1], delimiter=",")
    assert data.shape == (m.n_nodes, 5)
    write_manifest(tmp_path / "manifest.yaml", {"a": 1}, tr)
    import yaml

    doc = yaml.safe_load((tmp_path / "manifest.yaml").read_text())
    assert doc["config"] == {"a": 1} and len(doc["energy"]) == 3


def test_time_grid_validation():
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0.3)
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0.0)
    assert TimeGrid(1.0, 0.25).steps == 4
