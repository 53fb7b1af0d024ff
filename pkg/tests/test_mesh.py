from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pphom.mesh import (
    EXTERNAL,
    INTERNAL,
    CellSpec,
    DomainSpec,
    MeshError,
    build_cell_mesh,
    build_perforated_domain_mesh,
    build_square_mesh,
    integrate,
    read_mesh,
    write_mesh,
)

HOLE_AREA = math.pi * 0.25**2


def test_unperforated_cell_counts():
    m = build_cell_mesh(CellSpec("none", resolution=2))
    assert m.n_triangles == 8 and m.n_nodes == 9
    assert len(m.edges_with_tag(INTERNAL)) == 0


def test_disk_cell_area():
    m = build_cell_mesh(CellSpec("disk", (0.5, 0.5), 0.25, 16))
    assert abs(m.element_areas.sum() - (1 - HOLE_AREA)) < 0.02 * (1 - HOLE_AREA)
    assert np.all(m.element_areas > 0)


def test_hole_nodes_on_circle():
    m = build_cell_mesh(CellSpec("disk", (0.5, 0.5), 0.25, 16))
    hole = m.boundary_nodes(INTERNAL)
    r = np.linalg.norm(m.nodes[hole] - 0.5, axis=1)
    assert np.allclose(r, 0.25, atol=1e-14)


def test_hole_area_error_halves():
    errs = []
    for n in (8, 16, 32, 64):
        m = build_cell_mesh(CellSpec("disk", (0.5, 0.5), 0.25, n))
        errs.append(abs(m.element_areas.sum() - (1 - HOLE_AREA)))
    # polygon inscribed in the circle: error ~ h^2, at least halving per refinement
    assert all(b <= a / 2 for a, b in zip(errs, errs[1:]))


def test_disk_touching_boundary_rejected():
    with pytest.raises(MeshError):
        CellSpec("disk", (0.5, 0.5), 0.6, 16)
    with pytest.raises(MeshError):
        CellSpec("disk", (0.3, 0.5), 0.3, 16)


def test_coarse_resolution_rejected():
    with pytest.raises(MeshError):
        build_cell_mesh(CellSpec("disk", (0.5, 0.5), 0.25, 2))


def test_periodic_pairs_geometry():
    m = build_cell_mesh(CellSpec("disk", (0.5, 0.5), 0.25, 8))
    assert m.periodic_pairs
    masters = set(m.periodic_pairs.values())
    assert not masters & set(m.periodic_pairs)  # no node is both master and slave
    for s, ma in m.periodic_pairs.items():
        d = m.nodes[s] - m.nodes[ma]
        assert np.allclose(np.abs(d), np.round(np.abs(d)), atol=1e-12)
        assert np.all(np.isin(np.round(np.abs(d)), (0.0, 1.0)))
        assert np.any(np.round(np.abs(d)) == 1.0)


def test_domain_tiling():
    m = build_perforated_domain_mesh(DomainSpec(0.25), CellSpec("disk", (0.5, 0.5), 0.25, 8))
    assert m.hole_count() == 16
    expected = 1 - 16 * (1 / 16) * HOLE_AREA
    assert abs(m.element_areas.sum() - expected) < 0.02 * expected
    # external edges exactly on the unit square boundary
    ext = m.nodes[m.edges_with_tag(EXTERNAL)]
    on = np.isclose(ext, 0.0) | np.isclose(ext, 1.0)
    assert np.all(np.any(on, axis=-1))
    # no duplicated nodes
    rounded = np.round(m.nodes / 1e-9).astype(np.int64)
    assert len(np.unique(rounded, axis=0)) == m.n_nodes


def test_unperforated_domain():
    m = build_perforated_domain_mesh(DomainSpec(0.5), CellSpec("none", resolution=4))
    assert m.hole_count() == 0
    assert m.n_nodes == 81
    assert abs(m.element_areas.sum() - 1) < 1e-12


def test_epsilon_validation():
    assert DomainSpec(1 / 3).n_cells == 3
    with pytest.raises(MeshError):
        DomainSpec(0.3)


@settings(max_examples=10, deadline=None)
@given(n=st.integers(1, 4), nc=st.sampled_from([8, 12]))
def test_tiling_node_count(n, nc):
    cell = build_cell_mesh(CellSpec("disk", (0.5, 0.5), 0.25, nc))
    m = build_perforated_domain_mesh(DomainSpec(1 / n), cell.cell_spec, cell)
    lat = cell.lattice[:, 0] >= 0
    n_lat = (n * nc + 1) ** 2 - n * n * ((nc + 1) ** 2 - lat.sum())
    assert m.n_nodes == n_lat + n * n * int((~lat).sum())
    assert np.all(m.element_areas > 0)


def test_integrate_exactness():
    cell = build_cell_mesh(CellSpec("none", resolution=4))
    assert abs(integrate(cell, np.ones(cell.n_nodes)) - 1) < 1e-12
    sq = build_square_mesh(5)
    assert abs(integrate(sq, lambda x, y: x) - 0.5) < 1e-12
    assert abs(integrate(sq, sq.nodes[:, 0]) - 0.5) < 1e-12
    disk = build_cell_mesh(CellSpec("disk", (0.5, 0.5), 0.25, 16))
    assert abs(integrate(disk, lambda x, y: 1.0 + 0 * x) - (1 - math.pi / 16)) < 0.02
    with pytest.raises(ValueError):
        integrate(sq, np.ones(3))


def test_locate_and_interpolate():
    m = build_square_mesh(4)
    f = 2 * m.nodes[:, 0] - m.nodes[:, 1] + 0.5
    pts = np.array([[0.1, 0.2], [0.77, 0.33], [1.0, 1.0]])
    assert np.allclose(m.interpolate(f, pts), 2 * pts[:, 0] - pts[:, 1] + 0.5)
    with pytest.raises(MeshError):
        m.interpolate(f, [[1.5, 0.5]])


def test_mesh_roundtrip(tmp_path):
    m = build_cell_mesh(CellSpec("disk", (0.5, 0.5), 0.25, 8))
    write_mesh(m, tmp_path / "m.txt")
    r = read_mesh(tmp_path / "m.txt")
    assert np.array_equal(r.nodes, m.nodes)
    assert np.array_equal(r.triangles, m.triangles)
    assert np.array_equal(r.edge_tags, m.edge_tags)
