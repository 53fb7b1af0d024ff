"""Structured triangular meshes of the periodic cell and of the tiled domain.

The cell is Y = [0,1]^2, optionally perforated by a disk.  The mesh starts
from a uniform grid of right triangles; elements whose centroid falls in the
disk are discarded and the nodes left on the hole boundary are pushed
radially onto the circle.  The perforated domain is obtained by tiling the
cell mesh 1/eps times in each direction.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

INTERNAL = 0  # hole boundary
EXTERNAL = 1  # outer boundary (cell faces for a cell mesh, dOmega for a domain)

# 3-point degree-2 rule, barycentric coordinates and weights (sum to 1)
QUAD_BARY = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
QUAD_WEIGHTS = np.full(3, 1 / 3)


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class CellSpec:
    hole_shape: str = "disk"
    hole_center: tuple = (0.5, 0.5)
    hole_radius: float = 0.25
    resolution: int = 16

    def __post_init__(self):
        if self.hole_shape not in ("disk", "none"):
            raise MeshError(f"unknown hole shape {self.hole_shape!r}")
        if int(self.resolution) != self.resolution or self.resolution < 1:
            raise MeshError("resolution must be a positive integer")
        if self.hole_shape == "disk":
            cx, cy = self.hole_center
            r = self.hole_radius
            if not 0 < r < 0.5:
                raise MeshError(f"hole radius {r} outside (0, 0.5)")
            if not (0 < cx - r and cx + r < 1 and 0 < cy - r and cy + r < 1):
                raise MeshError("hole touches the cell boundary")

    @property
    def perforated(self) -> bool:
        return self.hole_shape != "none"


@dataclass(frozen=True)
class DomainSpec:
    epsilon: float

    @property
    def n_cells(self) -> int:
        n = int(round(1.0 / self.epsilon))
        if n < 1 or abs(n * self.epsilon - 1.0) > 1e-9:
            raise MeshError(f"1/epsilon must be an integer, got epsilon={self.epsilon}")
        return n

    def __post_init__(self):
        self.n_cells  # validates


@dataclass(eq=False)
class Mesh:
    nodes: np.ndarray  # (n, 2)
    triangles: np.ndarray  # (m, 3), counter-clockwise
    boundary_edges: np.ndarray  # (k, 2)
    edge_tags: np.ndarray  # (k,) INTERNAL / EXTERNAL
    periodic_pairs: dict = field(default_factory=dict)  # slave -> master
    lattice: np.ndarray | None = None  # (n, 2) integer grid index, -1 if off-grid
    epsilon: float | None = None  # set for tiled domain meshes
    cell_spec: CellSpec | None = None

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        self.triangles = np.asarray(self.triangles, dtype=np.int64)
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        self.element_areas = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        self._locator = None

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def edges_with_tag(self, tag: int) -> np.ndarray:
        return self.boundary_edges[self.edge_tags == tag]

    def boundary_nodes(self, tag: int) -> np.ndarray:
        return np.unique(self.edges_with_tag(tag))

    def quad_points(self) -> np.ndarray:
        """Quadrature points, shape (m, 3, 2)."""
        p = self.nodes[self.triangles]
        return np.einsum("qa,mad->mqd", QUAD_BARY, p)

    def basis_gradients(self) -> np.ndarray:
        """Gradients of the three P1 hat functions per element, shape (m, 3, 2)."""
        p = self.nodes[self.triangles]
        x, y = p[..., 0], p[..., 1]
        two_a = 2.0 * self.element_areas
        g = np.empty((self.n_triangles, 3, 2))
        g[:, 0, 0] = y[:, 1] - y[:, 2]
        g[:, 1, 0] = y[:, 2] - y[:, 0]
        g[:, 2, 0] = y[:, 0] - y[:, 1]
        g[:, 0, 1] = x[:, 2] - x[:, 1]
        g[:, 1, 1] = x[:, 0] - x[:, 2]
        g[:, 2, 1] = x[:, 1] - x[:, 0]
        return g / two_a[:, None, None]

    def hole_count(self) -> int:
        """Number of connected hole boundaries (components of internal edges)."""
        edges = self.edges_with_tag(INTERNAL)
        if len(edges) == 0:
            return 0
        from scipy.sparse import coo_matrix
        from scipy.sparse.csgraph import connected_components

        nodes = np.unique(edges)
        idx = np.searchsorted(nodes, edges)
        g = coo_matrix((np.ones(len(idx)), (idx[:, 0], idx[:, 1])), shape=(len(nodes),) * 2)
        return connected_components(g, directed=False)[0]

    def locate(self, points, tol: float = 1e-9):
        """Containing triangle and barycentric coordinates for each point.

        Returns (tri, bary) with tri = -1 for points outside the mesh.
        """
        if self._locator is None:
            self._locator = _BucketLocator(self)
        return self._locator.locate(np.atleast_2d(np.asarray(points, float)), tol)

    def interpolate(self, values, points, tol: float = 1e-9):
        """Evaluate nodal P1 field(s) at points; values has trailing axis n_nodes."""
        tri, bary = self.locate(points, tol)
        if np.any(tri < 0):
            bad = np.asarray(points)[tri < 0][0]
            raise MeshError(f"point {bad} lies outside the mesh")
        v = np.asarray(values)
        nodes = self.triangles[tri]
        return np.einsum("...pa,pa->...p", v[..., nodes], bary)


class _BucketLocator:
    """Uniform bucket grid over element bounding boxes for point location."""

    def __init__(self, mesh: Mesh):
        p = mesh.nodes[mesh.triangles]
        self.lo = mesh.nodes.min(axis=0)
        span = mesh.nodes.max(axis=0) - self.lo
        nb = max(1, int(np.sqrt(mesh.n_triangles / 2)))
        self.nb = nb
        self.h = np.where(span > 0, span / nb, 1.0)
        bmin = np.clip(((p.min(axis=1) - self.lo) / self.h).astype(int), 0, nb - 1)
        bmax = np.clip(((p.max(axis=1) - self.lo) / self.h).astype(int), 0, nb - 1)
        cells, elems = [], []
        span_max = (bmax - bmin).max(axis=0)
        all_e = np.arange(mesh.n_triangles)
        for di in range(span_max[0] + 1):
            for dj in range(span_max[1] + 1):
                ok = (bmin[:, 0] + di <= bmax[:, 0]) & (bmin[:, 1] + dj <= bmax[:, 1])
                cells.append((bmin[ok, 0] + di) * nb + bmin[ok, 1] + dj)
                elems.append(all_e[ok])
        cells = np.concatenate(cells)
        elems = np.concatenate(elems)
        order = np.argsort(cells, kind="stable")
        self.elems = elems[order]
        self.start = np.searchsorted(cells[order], np.arange(nb * nb + 1))
        self.mesh = mesh
        p0 = p[:, 0]
        t = np.stack([p[:, 1] - p0, p[:, 2] - p0], axis=2)  # (m, 2, 2) columns
        self.p0 = p0
        self.tinv = np.linalg.inv(t)

    def _bary(self, elems, pts):
        lam = np.einsum("pij,pj->pi", self.tinv[elems], pts - self.p0[elems])
        return np.column_stack([1 - lam.sum(axis=1), lam])

    def locate(self, pts, tol):
        n = len(pts)
        b = np.clip(((pts - self.lo) / self.h).astype(int), 0, self.nb - 1)
        bucket = b[:, 0] * self.nb + b[:, 1]
        tri = np.full(n, -1)
        bary = np.zeros((n, 3))
        best = np.full(n, -np.inf)
        counts = self.start[bucket + 1] - self.start[bucket]
        for k in range(counts.max(initial=0)):
            sel = np.nonzero(counts > k)[0]
            elems = self.elems[self.start[bucket[sel]] + k]
            lam = self._bary(elems, pts[sel])
            score = lam.min(axis=1)
            better = score > best[sel]
            s = sel[better]
            best[s] = score[better]
            tri[s] = elems[better]
            bary[s] = lam[better]
        miss = best < -tol
        tri[miss] = -1
        # clamp tiny negative coordinates from round-off
        ok = ~miss
        bary[ok] = np.clip(bary[ok], 0, None)
        bary[ok] /= bary[ok].sum(axis=1, keepdims=True)
        return tri, bary


def _boundary_edges(triangles):
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    key = np.sort(e, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    return e[counts[inv.ravel()] == 1]


def _grid(n):
    i, j = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="xy")
    lattice = np.column_stack([i.ravel(), j.ravel()])
    nodes = lattice / n
    idx = lambda a, b: b * (n + 1) + a  # noqa: E731
    a, b = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    a, b = a.ravel(), b.ravel()
    v00, v10, v01, v11 = idx(a, b), idx(a + 1, b), idx(a, b + 1), idx(a + 1, b + 1)
    tris = np.concatenate([np.column_stack([v00, v10, v11]), np.column_stack([v00, v11, v01])])
    return nodes, tris, lattice


def build_cell_mesh(spec: CellSpec) -> Mesh:
    """Mesh of Y* = [0,1]^2 minus the (polygonalised) hole, with periodic pairing."""
    n = spec.resolution
    nodes, tris, lattice = _grid(n)
    if spec.perforated:
        c = np.asarray(spec.hole_center, float)
        r = spec.hole_radius
        centroids = nodes[tris].mean(axis=1)
        tris = tris[np.linalg.norm(centroids - c, axis=1) >= r]
        on_face = np.any((lattice == 0) | (lattice == n), axis=1)
        while True:
            # a kept element whose three nodes all sit on the hole boundary would
            # collapse to a sliver inside the disk after snapping: drop it
            bedges = _boundary_edges(tris)
            is_hole = np.zeros(len(nodes), bool)
            is_hole[bedges[~np.all(on_face[bedges], axis=1)].ravel()] = True
            sliver = np.all(is_hole[tris], axis=1)
            if not sliver.any():
                break
            tris = tris[~sliver]
        hole_nodes = np.nonzero(is_hole)[0]
        if np.any(on_face[hole_nodes]):
            raise MeshError(f"resolution {n} cannot separate the hole from the cell faces")
        d = nodes[hole_nodes] - c
        nodes = nodes.copy()
        nodes[hole_nodes] = c + r * d / np.linalg.norm(d, axis=1)[:, None]
        lattice = lattice.copy()
        lattice[hole_nodes] = -1
        # hole nodes on (nearly) one ray through the centre land on (nearly) the
        # same point: collapse them and drop the triangles that degenerate
        ang = np.arctan2(d[:, 1], d[:, 0])
        order = np.argsort(ang)
        same = np.abs(np.diff(ang[order])) * r < 0.1 / n
        target = np.arange(len(nodes))
        for k in np.nonzero(same)[0]:
            target[hole_nodes[order[k + 1]]] = target[hole_nodes[order[k]]]
        tris = target[tris]
        keep = (tris[:, 0] != tris[:, 1]) & (tris[:, 1] != tris[:, 2]) & (tris[:, 0] != tris[:, 2])
        tris = tris[keep]
        hole_nodes = np.unique(target[hole_nodes])
        if len(hole_nodes) < 8:
            raise MeshError(f"resolution {n} resolves the hole with only {len(hole_nodes)} boundary nodes (need 8)")
        used = np.unique(tris)
        remap = np.full(len(nodes), -1)
        remap[used] = np.arange(len(used))
        nodes, lattice, tris = nodes[used], lattice[used], remap[tris]

    bedges = _boundary_edges(tris)
    lat = lattice[bedges]  # (k, 2, 2)
    outer = np.zeros(len(bedges), bool)
    for axis in (0, 1):
        for v in (0, n):
            outer |= np.all(lat[:, :, axis] == v, axis=1)
    tags = np.where(outer, EXTERNAL, INTERNAL)

    key = {tuple(ij): k for k, ij in enumerate(lattice) if ij[0] >= 0}
    pairs = {}
    for k, (i, j) in enumerate(lattice):
        if i == n or j == n:
            pairs[k] = key[(i % n, j % n)]
    mesh = Mesh(nodes, tris, bedges, tags, pairs, lattice, None, spec)
    if np.any(mesh.element_areas <= 0):
        raise MeshError("snapping produced degenerate or inverted triangles")
    return mesh


def build_perforated_domain_mesh(dspec: DomainSpec, cspec: CellSpec, cell: Mesh | None = None) -> Mesh:
    """Tile the eps-scaled cell mesh over (0,1)^2 and merge shared interface nodes."""
    n = dspec.n_cells
    eps = 1.0 / n
    cell = cell if cell is not None else build_cell_mesh(cspec)
    nc = cspec.resolution
    big = n * nc
    nn = cell.n_nodes
    on_lat = cell.lattice[:, 0] >= 0

    all_nodes, all_tris, keys = [], [], []
    next_free = (big + 1) ** 2
    for b in range(n):
        for a in range(n):
            off = len(all_nodes) * nn
            all_nodes.append((cell.nodes + [a, b]) * eps)
            all_tris.append(cell.triangles + off)
            k = np.empty(nn, dtype=np.int64)
            gi = cell.lattice[:, 0] + a * nc
            gj = cell.lattice[:, 1] + b * nc
            k[on_lat] = gj[on_lat] * (big + 1) + gi[on_lat]
            m = int((~on_lat).sum())
            k[~on_lat] = next_free + np.arange(m)
            next_free += m
            keys.append(k)
    nodes = np.concatenate(all_nodes)
    tris = np.concatenate(all_tris)
    keys = np.concatenate(keys)
    uniq, first, inv = np.unique(keys, return_index=True, return_inverse=True)
    nodes = nodes[first]
    tris = inv.ravel()[tris]
    lattice = np.full((len(uniq), 2), -1, dtype=np.int64)
    lat_mask = uniq < (big + 1) ** 2
    lattice[lat_mask, 0] = uniq[lat_mask] % (big + 1)
    lattice[lat_mask, 1] = uniq[lat_mask] // (big + 1)

    bedges = _boundary_edges(tris)
    lat = lattice[bedges]
    outer = np.zeros(len(bedges), bool)
    for axis in (0, 1):
        for v in (0, big):
            outer |= np.all(lat[:, :, axis] == v, axis=1)
    tags = np.where(outer, EXTERNAL, INTERNAL)
    return Mesh(nodes, tris, bedges, tags, {}, lattice, eps, cspec)


def build_square_mesh(n: int) -> Mesh:
    """Unperforated uniform mesh of the unit square with n subdivisions per side."""
    return build_perforated_domain_mesh(DomainSpec(1.0), CellSpec("none", resolution=n))


def integrate(mesh: Mesh, f) -> float:
    """Quadrature sum of a nodal field, quadrature-point field or callable f(x1, x2)."""
    if callable(f):
        q = mesh.quad_points()
        vals = np.broadcast_to(np.asarray(f(q[..., 0], q[..., 1]), float), q.shape[:2])
        return float(np.sum(mesh.element_areas * (vals @ QUAD_WEIGHTS)))
    v = np.asarray(f, float)
    if v.shape == (mesh.n_nodes,):
        return float(np.sum(mesh.element_areas * v[mesh.triangles].mean(axis=1)))
    if v.shape == (mesh.n_triangles, 3):
        return float(np.sum(mesh.element_areas * (v @ QUAD_WEIGHTS)))
    raise ValueError(
        f"field of shape {v.shape} matches neither {mesh.n_nodes} nodes nor ({mesh.n_triangles}, 3) quadrature points"
    )


def write_mesh(mesh: Mesh, path) -> None:
    """Plain-text export: node lines 'x y', triangle lines 'i j k', edge lines 'i j tag'."""
    names = {INTERNAL: "internal", EXTERNAL: "external"}
    with open(path, "w") as fh:
        fh.write(f"# nodes {mesh.n_nodes}\n")
        for x, y in mesh.nodes:
            fh.write(f"{x:.17g} {y:.17g}\n")
        fh.write(f"# triangles {mesh.n_triangles}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"{i} {j} {k}\n")
        fh.write(f"# edges {len(mesh.boundary_edges)}\n")
        for (i, j), t in zip(mesh.boundary_edges, mesh.edge_tags):
            fh.write(f"{i} {j} {names[int(t)]}\n")


def read_mesh(path) -> Mesh:
    sections = {}
    current = None
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("#"):
                current = line.split()[1]
                sections[current] = []
            elif line:
                sections[current].append(line.split())
    nodes = np.array(sections["nodes"], float).reshape(-1, 2)
    tris = np.array(sections["triangles"], int).reshape(-1, 3)
    edges = sections.get("edges", [])
    e = np.array([[int(a), int(b)] for a, b, _ in edges], int).reshape(-1, 2)
    tags = np.array([INTERNAL if t == "internal" else EXTERNAL for _, _, t in edges], int)
    return Mesh(nodes, tris, e, tags)
