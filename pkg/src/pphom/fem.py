"""Vectorised P1 finite-element kernels on triangle meshes.

Element arrays have shape (m, 3, 3) for matrices and (m, 3) for vectors.
Fields sampled at the three quadrature points of each element have trailing
shape (m, 3); tensor-valued fields carry their tensor axes first.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .mesh import QUAD_BARY, QUAD_WEIGHTS, Mesh

# PHI[q, a]: hat function a at quadrature point q
PHI = QUAD_BARY


def _qfield(mesh: Mesh, f, shape=()):
    f = np.asarray(f, float)
    return np.broadcast_to(f.reshape(f.shape + (1, 1)) if f.shape == shape else f, shape + (mesh.n_triangles, 3))


def elem_stiffness(mesh: Mesh, A=None) -> np.ndarray:
    """int (A grad phi_b) . grad phi_a, A of shape (2, 2) or (2, 2, m, 3)."""
    g = mesh.basis_gradients()
    if A is None:
        A = np.eye(2)
    Abar = _qfield(mesh, A, (2, 2)) @ QUAD_WEIGHTS  # (2, 2, m)
    return mesh.element_areas[:, None, None] * np.einsum("mai,ijm,mbj->mab", g, Abar, g)


def elem_mass(mesh: Mesh, c=1.0) -> np.ndarray:
    """int c phi_b phi_a with c scalar or (m, 3)."""
    cq = _qfield(mesh, c)
    return mesh.element_areas[:, None, None] * np.einsum("q,mq,qa,qb->mab", QUAD_WEIGHTS, cq, PHI, PHI)


def elem_drift(mesh: Mesh, D) -> np.ndarray:
    """int phi_b (D . grad phi_a) with D of shape (2,) or (2, m, 3)."""
    g = mesh.basis_gradients()
    Dq = _qfield(mesh, D, (2,))
    return mesh.element_areas[:, None, None] * np.einsum("q,imq,mai,qb->mab", QUAD_WEIGHTS, Dq, g, PHI)


def elem_load(mesh: Mesh, f) -> np.ndarray:
    """int f phi_a with f scalar or (m, 3)."""
    fq = _qfield(mesh, f)
    return mesh.element_areas[:, None] * np.einsum("q,mq,qa->ma", QUAD_WEIGHTS, fq, PHI)


def elem_flux_load(mesh: Mesh, q) -> np.ndarray:
    """int q . grad phi_a with q of shape (2,) or (2, m, 3)."""
    qbar = _qfield(mesh, q, (2,)) @ QUAD_WEIGHTS  # (2, m)
    return mesh.element_areas[:, None] * np.einsum("mai,im->ma", mesh.basis_gradients(), qbar)


def assemble_matrix(mesh: Mesh, Ke, shape=None, row_offset=0, col_offset=0):
    n = mesh.n_nodes
    t = mesh.triangles
    rows = np.broadcast_to(t[:, :, None], Ke.shape) + row_offset
    cols = np.broadcast_to(t[:, None, :], Ke.shape) + col_offset
    shape = shape or (n, n)
    return sp.csr_matrix((Ke.ravel(), (rows.ravel(), cols.ravel())), shape=shape)


def assemble_vector(mesh: Mesh, Fe) -> np.ndarray:
    """Scatter element vectors; Fe may carry leading batch axes: (..., m, 3)."""
    Fe = np.asarray(Fe)
    out = np.zeros(Fe.shape[:-2] + (mesh.n_nodes,))
    flat = out.reshape(-1, mesh.n_nodes)
    for k, fe in enumerate(Fe.reshape(-1, *Fe.shape[-2:])):
        flat[k] = np.bincount(mesh.triangles.ravel(), weights=fe.ravel(), minlength=mesh.n_nodes)
    return out


def stiffness(mesh, A=None):
    return assemble_matrix(mesh, elem_stiffness(mesh, A))


def mass(mesh, c=1.0):
    return assemble_matrix(mesh, elem_mass(mesh, c))


def load(mesh, f):
    return assemble_vector(mesh, elem_load(mesh, f))


def flux_load(mesh, q):
    return assemble_vector(mesh, elem_flux_load(mesh, q))


def node_weights(mesh: Mesh) -> np.ndarray:
    """int phi_a over the mesh, i.e. the lumped mass."""
    return load(mesh, 1.0)


def boundary_load(mesh: Mesh, g, tag=None) -> np.ndarray:
    """int_{edges} g phi_a ds with two-point Gauss; g is callable g(x1, x2) or edge-node values (k, 2)."""
    edges = mesh.boundary_edges if tag is None else mesh.edges_with_tag(tag)
    p = mesh.nodes[edges]  # (k, 2, 2)
    length = np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
    s = 0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)
    out = np.zeros(mesh.n_nodes)
    for sq in s:
        x = (1 - sq) * p[:, 0] + sq * p[:, 1]
        if callable(g):
            gv = np.broadcast_to(np.asarray(g(x[:, 0], x[:, 1]), float), length.shape)
        else:
            gv = (1 - sq) * np.asarray(g)[:, 0] + sq * np.asarray(g)[:, 1]
        w = 0.5 * length * gv
        np.add.at(out, edges[:, 0], w * (1 - sq))
        np.add.at(out, edges[:, 1], w * sq)
    return out


def boundary_integral(mesh: Mesh, g, tag=None) -> float:
    edges = mesh.boundary_edges if tag is None else mesh.edges_with_tag(tag)
    if len(edges) == 0:
        return 0.0
    return float(boundary_load(mesh, g, tag).sum())


def element_gradients(mesh: Mesh, u) -> np.ndarray:
    """Piecewise-constant gradient of nodal fields u (..., n) -> (..., m, 2)."""
    u = np.asarray(u, float)
    return np.einsum("...ma,mai->...mi", u[..., mesh.triangles], mesh.basis_gradients())


def at_quad(mesh: Mesh, u) -> np.ndarray:
    """Nodal field(s) (..., n) interpolated to quadrature points (..., m, 3)."""
    u = np.asarray(u, float)
    return np.einsum("qa,...ma->...mq", PHI, u[..., mesh.triangles])


def l2_norm(mesh: Mesh, u) -> float:
    """L2 norm of nodal field(s); leading axes are summed (vector fields)."""
    uq = at_quad(mesh, u)
    return float(np.sqrt(np.sum(mesh.element_areas * (uq**2 @ QUAD_WEIGHTS).reshape(-1, mesh.n_triangles))))


def h1_seminorm(mesh: Mesh, u) -> float:
    g = element_gradients(mesh, u)
    return float(np.sqrt(np.sum(mesh.element_areas * np.sum(g**2, axis=-1).reshape(-1, mesh.n_triangles))))


def h1_norm(mesh: Mesh, u) -> float:
    return float(np.hypot(l2_norm(mesh, u), h1_seminorm(mesh, u)))


def coefficient_at_quad(coeffs, name, t, mesh: Mesh, eps=None, x=None):
    """Evaluate a coefficient family at the quadrature points of `mesh`.

    Fine meshes (eps given): x = point, y = point / eps.  Cell meshes (x
    given): the mesh lives in y and x is the frozen macro point.
    Result shape: tensor shape + (m, 3).
    """
    q = mesh.quad_points()
    if x is not None:
        xx = np.broadcast_to(np.asarray(x, float), q.shape)
        vals = coeffs.evaluate_at(name, t, xx, y=q)
    else:
        vals = coeffs.evaluate_at(name, t, q, eps=eps) if eps else coeffs.evaluate_at(name, t, q)
    shape = coeffs[name].shape + q.shape[:2]
    return np.broadcast_to(vals, shape)


def coefficient_at_nodes(coeffs, name, t, mesh: Mesh, eps=None):
    vals = coeffs.evaluate_at(name, t, mesh.nodes, eps=eps) if eps else coeffs.evaluate_at(name, t, mesh.nodes)
    return np.broadcast_to(vals, coeffs[name].shape + (mesh.n_nodes,))
