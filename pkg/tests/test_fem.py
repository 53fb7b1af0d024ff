from __future__ import annotations

import numpy as np
import pytest

from pphom import fem
from pphom.mesh import EXTERNAL, INTERNAL, CellSpec, build_cell_mesh, build_square_mesh


@pytest.fixture(scope="module")
def square():
    return build_square_mesh(8)


def test_mass_integrates_products(square):
    x, y = square.nodes.T
    M = fem.mass(square)
    # linear fields are represented exactly, and the 3-point rule integrates quadratics exactly
    assert np.ones_like(x) @ M @ np.ones_like(x) == pytest.approx(1.0, abs=1e-13)
    assert x @ M @ y == pytest.approx(0.25, abs=1e-13)
    assert x @ M @ x == pytest.approx(1 / 3, abs=1e-13)


def test_stiffness_annihilates_constants_and_is_symmetric(square):
    K = fem.stiffness(square, np.diag([2.0, 1.0]))
    assert np.abs(K @ np.ones(square.n_nodes)).max() < 1e-12
    assert abs(K - K.T).max() < 1e-14
    x = square.nodes[:, 0]
    assert x @ K @ x == pytest.approx(2.0, abs=1e-12)


def test_node_weights_sum_to_area():
    cell = build_cell_mesh(CellSpec("disk", (0.5, 0.5), 0.25, 16))
    assert fem.node_weights(cell).sum() == pytest.approx(cell.element_areas.sum(), rel=1e-13)


def test_boundary_integrals():
    cell = build_cell_mesh(CellSpec("disk", (0.5, 0.5), 0.25, 32))
    perimeter = fem.boundary_integral(cell, lambda a, b: np.ones_like(a), INTERNAL)
    assert perimeter == pytest.approx(2 * np.pi * 0.25, rel=5e-3)
    assert fem.boundary_integral(cell, lambda a, b: np.ones_like(a), EXTERNAL) == pytest.approx(4.0, rel=1e-12)


def test_norms_of_linear_field(square):
    x = square.nodes[:, 0]
    assert fem.l2_norm(square, x) == pytest.approx(np.sqrt(1 / 3), rel=1e-12)
    assert fem.h1_seminorm(square, x) == pytest.approx(1.0, rel=1e-12)
    assert fem.h1_norm(square, np.stack([x, x])) == pytest.approx(np.sqrt(2 * (1 / 3 + 1)), rel=1e-12)


def test_flux_load_matches_stiffness(square):
    # int q . grad phi with q = grad u equals K u for linear u
    u = 3 * square.nodes[:, 0] - square.nodes[:, 1]
    b = fem.flux_load(square, np.array([3.0, -1.0]))
    assert np.allclose(b, fem.stiffness(square) @ u, atol=1e-12)
