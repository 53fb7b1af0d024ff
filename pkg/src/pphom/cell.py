"""Periodic cell problems on the perforated unit cell.

Every cell problem is solved in flux form

    -div_y (E grad_y w + q) = s      in Y*,
    -(E grad_y w + q) . n  = g       on the hole boundary,
    w periodic, int_{Y*} w = 0,

whose weak form is  int (E grad w) . grad phi = int s phi - int_hole g phi
- int q . grad phi.  Flux data q keeps every right-hand side free of
derivatives of the coefficients.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import fem
from .linalg import Factorized, bordered
from .mesh import INTERNAL, Mesh

log = logging.getLogger(__name__)

COMPAT_TOL = 1e-8
X_STEP = 1e-4  # finite-difference step for x-derivatives of cell solutions


class CompatibilityError(ValueError):
    def __init__(self, volume: float, boundary: float):
        super().__init__(
            f"incompatible cell data: volume integral {volume:.6e} differs from hole-boundary integral {boundary:.6e}"
        )
        self.volume = volume
        self.boundary = boundary


def periodic_prolongation(mesh: Mesh) -> sp.csr_matrix:
    """Map reduced (periodic) unknowns to all nodes; slave nodes copy their master."""
    n = mesh.n_nodes
    master = np.arange(n)
    for s, m in mesh.periodic_pairs.items():
        master[s] = m
    free, col = np.unique(master, return_inverse=True)
    return sp.csr_matrix((np.ones(n), (np.arange(n), col)), shape=(n, len(free)))


def _as_quad(mesh, f, lead=()):
    """Scalar / callable(y1, y2) / nodal / quadrature field -> lead + (m, 3)."""
    if f is None:
        return np.zeros(lead + (mesh.n_triangles, 3))
    if callable(f):
        q = mesh.quad_points()
        return np.broadcast_to(np.asarray(f(q[..., 0], q[..., 1]), float), lead + q.shape[:2])
    f = np.asarray(f, float)
    if f.shape[-1:] == (mesh.n_nodes,) and f.shape[-2:] != (mesh.n_triangles, 3):
        return fem.at_quad(mesh, f)
    return np.broadcast_to(f.reshape(f.shape + (1, 1)) if f.shape == lead else f, lead + (mesh.n_triangles, 3))


@dataclass
class CellProblem:
    mesh: Mesh
    A: np.ndarray = field(default_factory=lambda: np.eye(2))  # (2,2) or (2,2,m,3)
    F: object = None  # volume source
    g: object = None  # callable hole-boundary flux data
    q: object = None  # flux data, (2,) or (2, m, 3)


class CellOperator:
    """Factorised periodic, mean-zero operator  -div(A grad .)  on one cell mesh."""

    def __init__(self, mesh: Mesh, A=None, tol: float = 1e-10):
        self.mesh = mesh
        self.tol = tol
        self.P = periodic_prolongation(mesh)
        K = fem.stiffness(mesh, A)
        self.K = (self.P.T @ K @ self.P).tocsr()
        self.weights = self.P.T @ fem.node_weights(mesh)
        self.area = float(mesh.element_areas.sum())
        self._solver = Factorized(bordered(self.K, self.weights), tol=tol)

    def rhs(self, s=None, q=None, g=None):
        """Reduced right-hand side(s); s has shape lead + (m,3), q lead + (2,m,3)."""
        m = self.mesh
        b = 0.0
        if s is not None:
            b = b + fem.assemble_vector(m, np.einsum("...mq,q,qa->...ma", s, fem.QUAD_WEIGHTS, fem.PHI) * m.element_areas[:, None])
        if q is not None:
            qbar = np.asarray(q) @ fem.QUAD_WEIGHTS  # lead + (2, m)
            fe = np.einsum("mai,...im->...ma", m.basis_gradients(), qbar) * m.element_areas[:, None]
            b = b - fem.assemble_vector(m, fe)
        if g is not None:
            b = b - fem.boundary_load(m, g, INTERNAL)
        b = np.asarray(b, float)
        if b.ndim == 0:
            b = np.zeros(m.n_nodes)
        flat = b.reshape(-1, m.n_nodes)
        return (self.P.T @ flat.T).T.reshape(b.shape[:-1] + (self.P.shape[1],))

    def compatibility(self, s=None, g=None):
        vol = 0.0 if s is None else np.sum(np.asarray(s) @ fem.QUAD_WEIGHTS * self.mesh.element_areas, axis=-1)
        bnd = 0.0 if g is None else fem.boundary_integral(self.mesh, g, INTERNAL)
        return np.asarray(vol, float), np.asarray(bnd, float)

    def solve(self, s=None, q=None, g=None, check: bool = True):
        vol, bnd = self.compatibility(s, g)
        scale = np.abs(vol) + np.abs(bnd) + self.area * (np.max(np.abs(s)) if s is not None else 0.0)
        bad = np.abs(vol - bnd) > COMPAT_TOL * np.maximum(scale, 1.0)
        if np.any(bad):
            vol, bnd = (np.ravel(a) for a in np.broadcast_arrays(vol, bnd))
            idx = int(np.argmax(np.abs(vol - bnd)))
            raise CompatibilityError(float(vol[idx]), float(bnd[idx]))
        b = self.rhs(s, q, g)
        lead = b.shape[:-1]
        B = b.reshape(-1, b.shape[-1]).T
        X = self._solver.solve(np.vstack([B, np.zeros((1, B.shape[1]))]))[:-1]
        if check:
            self.check_weak_residual(X, B)
        w = (self.P @ X).T.reshape(lead + (self.mesh.n_nodes,))
        return w

    def check_weak_residual(self, X, B, n_tests: int = 20, seed: int = 0):
        """Weak residual against random periodic test fields."""
        rng = np.random.default_rng(seed)
        V = rng.standard_normal((self.K.shape[0], n_tests))
        R = B - self.K @ X
        lhs = np.abs(V.T @ R)
        bound = 1e-8 * np.linalg.norm(V, axis=0)[:, None] * np.maximum(np.linalg.norm(B, axis=0), 1.0)[None, :]
        if np.any(lhs > bound):
            raise ArithmeticError(f"weak residual {lhs.max():.3e} exceeds tolerance")
        return float(lhs.max()) if lhs.size else 0.0


def solve_generic(cp: CellProblem, tol: float = 1e-10) -> np.ndarray:
    op = CellOperator(cp.mesh, cp.A, tol)
    s = None if cp.F is None else _as_quad(cp.mesh, cp.F)
    q = None if cp.q is None else _as_quad(cp.mesh, cp.q, (2,))
    return op.solve(s, q, cp.g)


# --------------------------------------------------------------------------
# first and second order cell functions


@dataclass
class CellFunctions:
    mesh: Mesh
    t: float
    x: tuple
    W: np.ndarray  # (d, n)
    Z: np.ndarray  # (N, N, n)
    P: np.ndarray | None = None  # (N, n)
    Q0: np.ndarray | None = None  # (N, N, n)
    R0: np.ndarray | None = None  # (N, N, n)
    Q1: np.ndarray | None = None  # (d, N, N, n)  index k, alpha, beta
    R1: np.ndarray | None = None  # (d, N, N, n), identically zero
    Q2: np.ndarray | None = None  # (d, d, n)

    FIELDS = ("W", "Z", "P", "Q0", "R0", "Q1", "R1", "Q2")

    def means(self) -> dict:
        w = fem.node_weights(self.mesh)
        return {k: np.asarray(getattr(self, k)) @ w for k in self.FIELDS if getattr(self, k) is not None}

    def node_table(self) -> dict:
        """Flat name -> nodal values mapping, e.g. 'W.1', 'Z.12', 'Q1.112'."""
        out = {}
        for k in self.FIELDS:
            arr = getattr(self, k)
            if arr is None:
                continue
            arr = np.asarray(arr)
            for idx in np.ndindex(arr.shape[:-1]):
                out[f"{k}." + "".join(str(i + 1) for i in idx)] = arr[idx]
        return out

    def write_table(self, path) -> None:
        table = self.node_table()
        names = list(table)
        with open(path, "w") as fh:
            fh.write(",".join(["node", "y1", "y2"] + names) + "\n")
            for i, (a, b) in enumerate(self.mesh.nodes):
                vals = ",".join(f"{table[k][i]:.12g}" for k in names)
                fh.write(f"{i},{a:.12g},{b:.12g},{vals}\n")


def _E_quad(coeffs, mesh, t, x):
    return fem.coefficient_at_quad(coeffs, "E", t, mesh, x=x)


def solve_W(mesh: Mesh, E, op: CellOperator | None = None) -> np.ndarray:
    """Cell functions W_k: flux data q = E e_k (k-th column of E)."""
    E = _as_tensor_quad(mesh, E, (2, 2))
    op = op or CellOperator(mesh, E)
    q = np.moveaxis(E, 1, 0)  # q[k, i] = E[i, k]
    return op.solve(q=q)


def solve_Z(mesh: Mesh, E, D, op: CellOperator | None = None) -> np.ndarray:
    """Cell functions Z_ab: flux data q_i = D_iab."""
    E = _as_tensor_quad(mesh, E, (2, 2))
    D = np.asarray(D, float)
    N = D.shape[1]
    D = _as_tensor_quad(mesh, D, (2, N, N))
    if not np.any(D):
        return np.zeros((N, N, mesh.n_nodes))
    op = op or CellOperator(mesh, E)
    q = np.moveaxis(D, 0, 2)  # (N, N, 2, m, 3)
    return op.solve(q=q)


def _as_tensor_quad(mesh, T, shape):
    T = np.asarray(T, float)
    if T.shape == shape:
        T = T.reshape(shape + (1, 1))
    return np.broadcast_to(T, shape + (mesh.n_triangles, 3))


def grad_quad(mesh: Mesh, u) -> np.ndarray:
    """Element gradients of nodal fields (..., n) as (..., 2, m, 3)."""
    g = fem.element_gradients(mesh, u)  # (..., m, 2)
    g = np.moveaxis(g, -1, -2)  # (..., 2, m)
    return np.broadcast_to(g[..., None], g.shape + (3,))


def corrected_E(mesh, E, W):
    """E_hat_ik = E_ik + E_il d_l W_k at quadrature points."""
    return E + np.einsum("ilmq,klmq->ikmq", E, grad_quad(mesh, W))


def corrected_D(mesh, E, D, Z):
    """D_hat_iab = D_iab + E_il d_l Z_ab at quadrature points."""
    return D + np.einsum("ilmq,ablmq->iabmq", E, grad_quad(mesh, Z))


@dataclass
class XDerivatives:
    """Central differences in x of first-order cell data; leading axis j = d/dx_j."""

    W: np.ndarray  # (2, d, n)
    Z: np.ndarray  # (2, N, N, n)
    Ehat: np.ndarray  # (2, d, d, m, 3)
    Dhat: np.ndarray  # (2, d, N, N, m, 3)


def first_order_data(mesh, coeffs, t, x):
    E = _E_quad(coeffs, mesh, t, x)
    D = fem.coefficient_at_quad(coeffs, "D", t, mesh, x=x)
    op = CellOperator(mesh, E)
    W = solve_W(mesh, E, op)
    Z = solve_Z(mesh, E, D, op)
    return E, D, op, W, Z


def x_derivatives(mesh, coeffs, t, x, h: float = X_STEP) -> XDerivatives | None:
    """None when E and D do not depend on x (all x-derivative terms vanish)."""
    if not coeffs.depends_on("ED", "x1", "x2"):
        return None
    parts = {"W": [], "Z": [], "Ehat": [], "Dhat": []}
    for j in range(2):
        vals = []
        for sgn in (1.0, -1.0):
            xs = np.array(x, float)
            xs[j] += sgn * h
            E, D, _, W, Z = first_order_data(mesh, coeffs, t, xs)
            vals.append((W, Z, corrected_E(mesh, E, W), corrected_D(mesh, E, D, Z)))
        for k, name in enumerate(parts):
            parts[name].append((vals[0][k] - vals[1][k]) / (2 * h))
    return XDerivatives(**{k: np.stack(v) for k, v in parts.items()})


def solve_second_order(mesh: Mesh, coeffs, t, x, W, Z, Estar, Dstar, averages: dict,
                       op: CellOperator | None = None, dx: XDerivatives | None = None):
    """Second-order cell functions P, Q0, R0, Q1, Q2 (and R1 = 0).

    Averages are normalised by |Y| = 1.  Right-hand sides subtract the
    corresponding Y*-means so every problem is compatible.
    """
    N = coeffs.N
    E = _E_quad(coeffs, mesh, t, x)
    D = fem.coefficient_at_quad(coeffs, "D", t, mesh, x=x)
    M = fem.coefficient_at_quad(coeffs, "M", t, mesh, x=x)
    H = fem.coefficient_at_quad(coeffs, "H", t, mesh, x=x)
    K = fem.coefficient_at_quad(coeffs, "K", t, mesh, x=x)
    op = op or CellOperator(mesh, E)
    c = 1.0 / op.area  # |Y| / |Y*|
    Wq = fem.at_quad(mesh, W)  # (d, m, 3)
    Zq = fem.at_quad(mesh, Z)  # (N, N, m, 3)
    Ehat = corrected_E(mesh, E, W)
    Dhat = corrected_D(mesh, E, D, Z)
    Mbar, Hbar, Kbar = averages["M"], averages["H"], averages["K"]

    P = op.solve(s=H - c * Hbar[:, None, None])
    R0 = op.solve(s=K - c * Kbar[:, :, None, None])

    # Q0_ab: q_i = E_ij dZ_ab/dx_j + sum_g D_iag Z_gb
    q0 = np.einsum("iagmq,gbmq->abimq", D, Zq)
    s0 = -M + c * Mbar[:, :, None, None]
    if dx is not None:
        q0 = q0 + np.einsum("ijmq,jabmq->abimq", E, fem.at_quad(mesh, dx.Z))
        divD = np.einsum("iiabmq->abmq", dx.Dhat)
        s0 = s0 + divD - c * _avg(mesh, divD)[..., None, None]
    Q0 = op.solve(s=s0, q=q0) if np.any(q0) or np.any(s0) else np.zeros((N, N, mesh.n_nodes))

    # Q1_kab: q_i = delta_ab E_ij dW_k/dx_j + E_ik Z_ab + D_iab W_k
    eyeN = np.eye(N)
    q1 = np.einsum("ikmq,abmq->kabimq", E, Zq) + np.einsum("iabmq,kmq->kabimq", D, Wq)
    s1 = Dhat - c * Dstar[..., None, None]  # (k, a, b, m, 3)
    if dx is not None:
        q1 = q1 + np.einsum("ab,ijmq,jkmq->kabimq", eyeN, E, fem.at_quad(mesh, dx.W))
        divE = np.einsum("iikmq->kmq", dx.Ehat)
        s1 = s1 + np.einsum("ab,kmq->kabmq", eyeN, divE - c * _avg(mesh, divE)[:, None, None])
    Q1 = op.solve(s=s1, q=q1) if np.any(q1) or np.any(s1) else np.zeros((2, N, N, mesh.n_nodes))

    # Q2_jk: q_i = E_ij W_k, s = E_hat_jk - c E*_jk
    q2 = np.einsum("ijmq,kmq->jkimq", E, Wq)
    s2 = Ehat - c * np.asarray(Estar)[:, :, None, None]
    Q2 = op.solve(s=s2, q=q2)
    R1 = np.zeros((2, N, N, mesh.n_nodes))
    return P, Q0, R0, Q1, R1, Q2


def _avg(mesh, fq):
    return np.sum(np.asarray(fq) @ fem.QUAD_WEIGHTS * mesh.element_areas, axis=-1)


def compute_cell_functions(mesh: Mesh, coeffs, t: float = 0.0, x=(0.5, 0.5), second_order: bool = True):
    """All cell functions and effective data at one macro point (t, x)."""
    from .effective import cell_averages, compute_Dstar, compute_Estar

    E, D, op, W, Z = first_order_data(mesh, coeffs, t, x)
    cf = CellFunctions(mesh, t, tuple(x), W, Z)
    Estar = compute_Estar(mesh, E, W)
    Dstar = compute_Dstar(mesh, D, E, Z, W)
    avgs = cell_averages(mesh, coeffs, t, x)
    if second_order:
        dx = x_derivatives(mesh, coeffs, t, x)
        cf.P, cf.Q0, cf.R0, cf.Q1, cf.R1, cf.Q2 = solve_second_order(
            mesh, coeffs, t, x, W, Z, Estar.value, Dstar.value, avgs, op, dx
        )
    return cf, Estar, Dstar, avgs
