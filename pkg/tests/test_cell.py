from __future__ import annotations

import numpy as np
import pytest

from pphom import fem
from pphom.cell import (
    CellOperator,
    CellProblem,
    CompatibilityError,
    compute_cell_functions,
    solve_generic,
    solve_W,
    solve_Z,
)
from pphom.coefficients import CoefficientSet
from pphom.effective import compute_Dstar
from pphom.mesh import CellSpec, build_cell_mesh


def cell(n=16, hole=True):
    return build_cell_mesh(CellSpec("disk" if hole else "none", (0.5, 0.5), 0.25, n))


@pytest.fixture(scope="module")
def disk16():
    return cell(16)


@pytest.fixture(scope="module")
def plain16():
    return cell(16, hole=False)


def test_zero_data_gives_zero(disk16):
    w = solve_generic(CellProblem(disk16, F=0.0))
    assert np.abs(w).max() < 1e-12


def test_periodic_eigenfunction():
    m = cell(32, hole=False)
    F = lambda y1, y2: (2 * np.pi) ** 2 * np.sin(2 * np.pi * y1)
    q = m.quad_points()
    w = solve_generic(CellProblem(m, F=F(q[..., 0], q[..., 1])))
    exact = np.sin(2 * np.pi * m.nodes[:, 0])
    assert fem.l2_norm(m, w - exact) < 5e-3


def test_incompatible_rhs_rejected(disk16):
    with pytest.raises(CompatibilityError) as info:
        solve_generic(CellProblem(disk16, F=1.0))
    assert info.value.volume == pytest.approx(disk16.element_areas.sum(), rel=1e-12)
    assert info.value.boundary == 0.0


def test_W_vanishes_for_constant_E_without_hole(plain16):
    for E in (np.eye(2), np.diag([2.0, 1.0])):
        assert np.abs(solve_W(plain16, E)).max() < 1e-12


def test_W_reflection_symmetry(disk16):
    W = solve_W(disk16, np.eye(2))
    assert np.abs(W).max() > 1e-2
    swapped = disk16.nodes[:, ::-1]
    W2_reflected = disk16.interpolate(W[1], swapped)
    assert np.max(np.abs(W[0] - W2_reflected)) < 1e-8 + 1e-2 * np.abs(W).max()


def test_Z_cases(disk16, plain16):
    assert np.abs(solve_Z(disk16, np.eye(2), np.zeros((2, 1, 1)))).max() < 1e-12
    D = np.array([0.3, -0.2]).reshape(2, 1, 1)
    assert np.abs(solve_Z(plain16, np.eye(2), D)).max() < 1e-12
    Z = solve_Z(disk16, np.eye(2), D)
    assert np.abs(Z).max() > 1e-3
    assert abs(fem.node_weights(disk16) @ Z[0, 0]) < 1e-9


def test_second_order_zero_cascade(plain16):
    c = CoefficientSet.from_arrays(1, M=np.eye(1), E=np.eye(2), H=np.ones(1), K=0.5 * np.ones((1, 1)))
    cf, *_ = compute_cell_functions(plain16, c)
    for name in ("W", "Z", "P", "R0", "Q2", "R1"):
        assert np.abs(getattr(cf, name)).max() < 1e-12, name


def test_second_order_on_disk(disk16):
    c = CoefficientSet.from_entries(
        {"M.11": "1", "E.11": "1", "E.22": "1", "H.1": "1 + 0.5*cos(2*pi*y1)", "K.11": "0.5",
         "D.111": "0.2", "D.211": "0.1"}, 1)
    cf, *_ = compute_cell_functions(disk16, c)
    for name, mean in cf.means().items():
        assert np.all(np.abs(mean) <= 1e-9), name
    assert np.all(cf.R1 == 0)
    assert np.abs(cf.R0).max() < 1e-12  # K constant
    assert np.abs(cf.P).max() > 1e-3
    slave = np.array(list(disk16.periodic_pairs))
    master = np.array([disk16.periodic_pairs[k] for k in slave])
    for name in cf.FIELDS:
        arr = getattr(cf, name)
        assert np.allclose(arr[..., slave], arr[..., master], atol=1e-12), name


def test_weak_residual_small(disk16):
    op = CellOperator(disk16)
    q = np.stack([np.broadcast_to(np.eye(2)[k][:, None, None], (2, disk16.n_triangles, 3)) for k in range(2)])
    X = op.solve(q=q, check=False)
    B = op.rhs(q=q).reshape(2, -1).T
    Xr = np.linalg.lstsq(op.P.toarray(), X.T, rcond=None)[0]
    assert op.check_weak_residual(Xr, B) < 1e-9


@pytest.mark.parametrize("n", [16, 32])
def test_WD_identity(n):
    m = cell(n)
    D = np.array([0.3, -0.2]).reshape(2, 1, 1)
    W = solve_W(m, np.eye(2))
    Z = solve_Z(m, np.eye(2), D)
    res = compute_Dstar(m, D, np.eye(2), Z, W)
    assert res.extra["identity"] <= 0.05


def test_cell_table_export(tmp_path, disk16):
    c = CoefficientSet.from_arrays(1, M=np.eye(1), E=np.eye(2))
    cf, *_ = compute_cell_functions(disk16, c, second_order=False)
    cf.write_table(tmp_path / "cells.csv")
    header = (tmp_path / "cells.csv").read_text().splitlines()[0].split(",")
    assert header[:5] == ["node", "y1", "y2", "W.1", "W.2"]
