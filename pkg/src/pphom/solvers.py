"""Fine-scale and upscaled pseudo-parabolic solvers.

Each time slice is one elliptic solve for V followed by a nodewise Rothe
update of U:

    A(t_k) V_k = H + K U_k + eps J . grad U_k,
    (I + dt L(t_{k+1})) U_{k+1} = U_k + dt G(t_k) V_k.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import fem
from .linalg import DIRECT_MAX, Factorized, SolverError, apply_dirichlet
from .mesh import EXTERNAL, Mesh

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TimeGrid:
    T_end: float
    dt: float

    def __post_init__(self):
        if not self.dt > 0 or not self.T_end > 0:
            raise ValueError("T_end and dt must be positive")
        if abs(self.steps * self.dt - self.T_end) > 1e-9 * self.T_end:
            raise ValueError(f"T_end={self.T_end} is not an integer multiple of dt={self.dt}")

    @property
    def steps(self) -> int:
        return max(1, int(round(self.T_end / self.dt)))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    def halved(self) -> "TimeGrid":
        return TimeGrid(self.T_end, self.dt / 2)


@dataclass
class FieldState:
    t: float
    U: np.ndarray  # (N, n)
    V: np.ndarray  # (N, n)


@dataclass
class Trajectory:
    mesh: Mesh
    grid: TimeGrid
    states: list = field(default_factory=list)
    energy: list = field(default_factory=list)  # rows (t, |U|_H1, |grad V|)
    monitor: list = field(default_factory=list)  # rows (t, lhs, rhs) of the a priori inequality
    timings: dict = field(default_factory=dict)

    @property
    def times(self):
        return np.array([s.t for s in self.states])

    def final(self) -> FieldState:
        return self.states[-1]

    def U(self):
        return np.array([s.U for s in self.states])

    def V(self):
        return np.array([s.V for s in self.states])


# --------------------------------------------------------------------------
# elliptic part


def block_matrix(mesh: Mesh, M, E, D) -> sp.csr_matrix:
    """Blocked operator for  M V - div(E grad V + D V), unknown layout alpha * n + node.

    M: (N,N,m,3), E: (2,2,m,3), D: (2,N,N,m,3).
    """
    N = M.shape[0]
    n = mesh.n_nodes
    K = fem.elem_stiffness(mesh, E)
    blocks = []
    for a in range(N):
        for b in range(N):
            Ke = fem.elem_mass(mesh, M[a, b])
            if a == b:
                Ke = Ke + K
            if np.any(D[:, a, b]):
                Ke = Ke + fem.elem_drift(mesh, D[:, a, b])
            blocks.append(fem.assemble_matrix(mesh, Ke, (N * n, N * n), a * n, b * n))
    A = blocks[0]
    for B in blocks[1:]:
        A = A + B
    return A.tocsr()


def dirichlet_dofs(mesh: Mesh, N: int) -> np.ndarray:
    bn = mesh.boundary_nodes(EXTERNAL)
    return np.concatenate([bn + a * mesh.n_nodes for a in range(N)])


class EllipticOperator:
    """Factorised elliptic operator at one time; rebuilt only when the data change."""

    def __init__(self, mesh, M, E, D, tol=1e-10, direct_max=DIRECT_MAX):
        self.mesh = mesh
        self.N = M.shape[0]
        self.dofs = dirichlet_dofs(mesh, self.N)
        A = block_matrix(mesh, M, E, D)
        self.A, _ = apply_dirichlet(A, np.zeros(A.shape[0]), self.dofs)
        self.solver = Factorized(self.A, tol=tol, direct_max=direct_max)

    def solve(self, load, x0=None):
        """load: (N, n) assembled right-hand side; returns (N, n) with V = 0 on the outer boundary."""
        b = np.asarray(load, float).ravel().copy()
        b[self.dofs] = 0.0
        return self.solver.solve(b, x0=None if x0 is None else np.ravel(x0)).reshape(self.N, -1)


def source_load(mesh: Mesh, coeffs, t, U, eps=None, H=None, K=None, J=None):
    """Assembled H + K U + eps J . grad U (J omitted when eps is None)."""
    Hq = fem.coefficient_at_quad(coeffs, "H", t, mesh, eps) if H is None else H
    Kq = fem.coefficient_at_quad(coeffs, "K", t, mesh, eps) if K is None else K
    Uq = fem.at_quad(mesh, U)  # (N, m, 3)
    f = Hq + np.einsum("abmq,bmq->amq", Kq, Uq)
    if eps is not None:
        Jq = fem.coefficient_at_quad(coeffs, "J", t, mesh, eps) if J is None else J
        if np.any(Jq):
            gU = fem.element_gradients(mesh, U)  # (N, m, 2)
            f = f + eps * np.einsum("iabmq,bmi->amq", Jq, gU)
    Fe = np.einsum("amq,q,qb->amb", f, fem.QUAD_WEIGHTS, fem.PHI) * mesh.element_areas[None, :, None]
    return fem.assemble_vector(mesh, Fe)


def elliptic_solve_fine(mesh: Mesh, coeffs, U, t, eps, tol=1e-10, direct_max=DIRECT_MAX, check_coercivity=True):
    """V at time t on the perforated mesh for a given U (N, n)."""
    if check_coercivity:
        _require_coercive(coeffs)
    op = EllipticOperator(
        mesh,
        fem.coefficient_at_quad(coeffs, "M", t, mesh, eps),
        fem.coefficient_at_quad(coeffs, "E", t, mesh, eps),
        fem.coefficient_at_quad(coeffs, "D", t, mesh, eps),
        tol,
        direct_max,
    )
    return op.solve(source_load(mesh, coeffs, t, U, eps))


_COERCIVE_CACHE = {}


def _require_coercive(coeffs, grid=None):
    from .coefficients import SampleGrid, validate_assumptions

    key = id(coeffs)
    if key not in _COERCIVE_CACHE:
        rep = validate_assumptions(coeffs, grid or SampleGrid(n=9))
        bad = [f for f in rep.failures if "drift" in f or "positive" in f]
        _COERCIVE_CACHE[key] = (coeffs, bad)
    bad = _COERCIVE_CACHE[key][1]
    if bad:
        raise ValueError("coefficients fail the coercivity assumptions: " + "; ".join(bad))


# --------------------------------------------------------------------------
# Rothe update


def rothe_step(U, V, dt, L, G, nodes=None):
    """(I + dt L) U_new = U + dt G V at every node.

    U, V: (N, n); L, G: (N, N) or (N, N, n) already evaluated at t_k and t_{k-1}.
    """
    U = np.asarray(U, float)
    N, n = U.shape
    L = np.broadcast_to(np.asarray(L, float).reshape(N, N, -1), (N, N, n))
    G = np.broadcast_to(np.asarray(G, float).reshape(N, N, -1), (N, N, n))
    rhs = U + dt * np.einsum("abn,bn->an", G, V)
    if not np.any(L):
        return rhs
    A = np.eye(N)[None] + dt * np.moveaxis(L, 2, 0)  # (n, N, N)
    det = np.linalg.det(A)
    if np.any(np.abs(det) < 1e-14):
        k = int(np.argmin(np.abs(det)))
        where = f" at x={tuple(nodes[k])}" if nodes is not None else f" at node {k}"
        raise SolverError(f"I + dt L is singular{where}")
    return np.linalg.solve(A, rhs.T[..., None])[..., 0].T


# --------------------------------------------------------------------------
# time loops


def _nodal(coeffs, name, t, mesh):
    return np.array(fem.coefficient_at_nodes(coeffs, name, t, mesh))


def _energies(mesh, U, V):
    return (
        math.sqrt(sum(fem.h1_norm(mesh, u) ** 2 for u in U)),
        math.sqrt(sum(fem.h1_seminorm(mesh, v) ** 2 for v in V)),
    )


def apriori_terms(mesh, U, V, bc):
    """Both sides of the per-step a priori inequality with constants `bc`."""
    gV = fem.element_gradients(mesh, V)  # (N, m, 2)
    gU = fem.element_gradients(mesh, U)
    area = mesh.element_areas
    lhs = sum(bc.m_tilde[a] * fem.l2_norm(mesh, V[a]) ** 2 for a in range(len(V)))
    lhs += sum(bc.e_tilde[i] * np.sum(area * np.sum(gV[..., i] ** 2, axis=0)) for i in range(2))
    rhs = bc.H_tilde * float(area.sum())
    rhs += sum(bc.K_tilde[a] * fem.l2_norm(mesh, U[a]) ** 2 for a in range(len(U)))
    rhs += sum(bc.J_tilde[i, a] * np.sum(area * gU[a, :, i] ** 2) for i in range(2) for a in range(len(U)))
    return float(lhs), float(rhs)


def _run(mesh, grid, N, U0, make_operator, make_load, L_at, G_at, time_dependent, monitor=None, save_every=1):
    traj = Trajectory(mesh, grid)
    t0 = time.perf_counter()
    U = np.array(U0, float)
    op = None
    V = None
    G_prev = None
    for k in range(grid.steps + 1):
        t = k * grid.dt
        if op is None or time_dependent:
            op = make_operator(t)
        V = op.solve(make_load(t, U), x0=V)
        if k % save_every == 0 or k == grid.steps:
            traj.states.append(FieldState(t, U.copy(), V.copy()))
        traj.energy.append((t,) + _energies(mesh, U, V))
        if monitor is not None:
            lhs, rhs = apriori_terms(mesh, U, V, monitor)
            traj.monitor.append((t, lhs, rhs))
            if lhs > rhs * (1 + 1e-9):
                log.warning("a priori inequality violated at t=%g: %g > %g", t, lhs, rhs)
        if k == grid.steps:
            break
        G_prev = G_at(t)
        U = rothe_step(U, V, grid.dt, L_at(t + grid.dt), G_prev, mesh.nodes)
    traj.timings["total"] = time.perf_counter() - t0
    return traj


def initial_U(coeffs, mesh):
    return _nodal(coeffs, "U", 0.0, mesh)


def run_fine(mesh: Mesh, coeffs, grid: TimeGrid, eps, tol=1e-10, direct_max=DIRECT_MAX, monitor=None, save_every=1):
    """Fine-scale trajectory on the perforated mesh, starting from U(0) = U*."""
    _require_coercive(coeffs)
    dep_t = coeffs.depends_on("MEDHKJ", "t")

    def make_operator(t):
        return EllipticOperator(
            mesh,
            fem.coefficient_at_quad(coeffs, "M", t, mesh, eps),
            fem.coefficient_at_quad(coeffs, "E", t, mesh, eps),
            fem.coefficient_at_quad(coeffs, "D", t, mesh, eps),
            tol,
            direct_max,
        )

    cache = {}

    def make_load(t, U):
        if "HKJ" not in cache or dep_t:
            cache["HKJ"] = tuple(fem.coefficient_at_quad(coeffs, f, t, mesh, eps) for f in "HKJ")
        H, K, J = cache["HKJ"]
        return source_load(mesh, coeffs, t, U, eps, H, K, J)

    L_at, G_at = _LG(coeffs, mesh)
    return _run(mesh, grid, coeffs.N, initial_U(coeffs, mesh), make_operator, make_load, L_at, G_at,
                coeffs.depends_on("MED", "t"), monitor, save_every)


def _LG(coeffs, mesh):
    memo = {}

    def get(name, t):
        key = (name, 0.0 if not coeffs.depends_on(name, "t") else t)
        if key not in memo:
            memo[key] = _nodal(coeffs, name, t, mesh)
        return memo[key]

    return (lambda t: get("L", t)), (lambda t: get("G", t))


class MacroCoefficients:
    """Effective data at the macro quadrature points, from cell solves.

    With coefficients independent of x and t a single cell solve serves
    the whole run; otherwise cell problems are solved at element centroids
    (and re-solved per time when the data depend on t).
    """

    def __init__(self, cell_mesh, coeffs, macro_mesh):
        from .cell import compute_cell_functions

        self.cell_mesh = cell_mesh
        self.coeffs = coeffs
        self.mesh = macro_mesh
        self.x_dep = coeffs.depends_on("MEDHK", "x1", "x2")
        self.t_dep = coeffs.depends_on("MEDHK", "t")
        self._cache = {}
        self._compute = compute_cell_functions

    def _solve_at(self, t, x):
        _, Es, Ds, av = self._compute(self.cell_mesh, self.coeffs, t, x, second_order=False)
        return {"E": Es.value, "D": Ds.value, "M": av["M"], "H": av["H"], "K": av["K"]}

    def at(self, t) -> dict:
        """Dict of quadrature arrays with shapes tensor + (m, 3)."""
        key = t if self.t_dep else 0.0
        if key in self._cache:
            return self._cache[key]
        m = self.mesh.n_triangles
        if not self.x_dep:
            vals = self._solve_at(t, (0.5, 0.5))
            out = {k: np.broadcast_to(np.asarray(v)[..., None, None], np.shape(v) + (m, 3)) for k, v in vals.items()}
        else:
            cent = self.mesh.nodes[self.mesh.triangles].mean(axis=1)
            rows = [self._solve_at(t, c) for c in cent]
            out = {k: np.broadcast_to(np.moveaxis(np.array([r[k] for r in rows]), 0, -1)[..., None],
                                      np.shape(rows[0][k]) + (m, 3)) for k in rows[0]}
        self._cache[key] = out
        return out

    @classmethod
    def from_tensors(cls, macro_mesh, coeffs, eff):
        """Constant effective data supplied directly (one macro point)."""
        obj = cls.__new__(cls)
        obj.mesh = macro_mesh
        obj.coeffs = coeffs
        obj.x_dep = obj.t_dep = False
        m = macro_mesh.n_triangles
        vals = eff.at(0) if hasattr(eff, "at") else eff
        obj._cache = {0.0: {k: np.broadcast_to(np.asarray(v)[..., None, None], np.shape(v) + (m, 3)) for k, v in vals.items()}}
        return obj


def run_macro(mesh: Mesh, macro: MacroCoefficients, coeffs, grid: TimeGrid, tol=1e-10, direct_max=DIRECT_MAX, save_every=1):
    """Upscaled trajectory (V0, U0) on the unperforated mesh."""

    def make_operator(t):
        c = macro.at(t)
        return EllipticOperator(mesh, c["M"], c["E"], c["D"], tol, direct_max)

    def make_load(t, U):
        c = macro.at(t)
        return source_load(mesh, coeffs, t, U, None, c["H"], c["K"])

    L_at, G_at = _LG(coeffs, mesh)
    return _run(mesh, grid, coeffs.N, initial_U(coeffs, mesh), make_operator, make_load, L_at, G_at,
                macro.t_dep, None, save_every)


# --------------------------------------------------------------------------
# derivative recovery


def _two_ring(mesh: Mesh):
    n = mesh.n_nodes
    t = mesh.triangles
    r = np.repeat(t, 3, axis=1).ravel()
    c = np.tile(t, (1, 3)).ravel()
    A = sp.csr_matrix((np.ones(len(r)), (r, c)), shape=(n, n))
    A.data[:] = 1.0
    A2 = (A @ A).tocsr()
    return A2


class DerivativeRecovery:
    """Least-squares quadratic fits over two-ring node patches.

    For each node the fit u ~ a + g.(x - x0) + (x - x0)^T H (x - x0) / 2 is
    solved in the patch; returns the gradient g and Hessian H at x0.
    """

    def __init__(self, mesh: Mesh):
        A2 = _two_ring(mesh)
        n = mesh.n_nodes
        counts = np.diff(A2.indptr)
        width = counts.max()
        self.idx = np.zeros((n, width), dtype=np.int64)
        self.mask = np.zeros((n, width), dtype=bool)
        pos = np.arange(A2.nnz) - np.repeat(A2.indptr[:-1], counts)
        rows = np.repeat(np.arange(n), counts)
        self.idx[rows, pos] = A2.indices
        self.mask[rows, pos] = True
        h = np.sqrt(2 * np.median(mesh.element_areas))
        d = (mesh.nodes[self.idx] - mesh.nodes[:, None, :]) / h  # scaled offsets
        dx, dy = d[..., 0], d[..., 1]
        B = np.stack([np.ones_like(dx), dx, dy, dx * dx / 2, dx * dy, dy * dy / 2], axis=-1)
        B = B * self.mask[..., None]
        NtN = np.einsum("npi,npj->nij", B, B)
        # rank-deficient patches (corners, thin bridges) get a small ridge
        NtN += 1e-10 * np.eye(6)
        self.op = np.linalg.solve(NtN, np.swapaxes(B, 1, 2))  # (n, 6, width)
        self.scale = np.array([1.0, 1 / h, 1 / h, 1 / h**2, 1 / h**2, 1 / h**2])

    def __call__(self, u):
        """u: (..., n) -> grad (..., n, 2), hess (..., n, 2, 2)."""
        u = np.asarray(u, float)
        vals = u[..., self.idx] * self.mask  # (..., n, width)
        c = np.einsum("nij,...nj->...ni", self.op, vals) * self.scale
        grad = c[..., 1:3]
        hess = np.stack([np.stack([c[..., 3], c[..., 4]], -1), np.stack([c[..., 4], c[..., 5]], -1)], -2)
        return grad, hess


# --------------------------------------------------------------------------
# output


def write_trajectory_csv(traj: Trajectory, directory, prefix="snapshot", every: int = 1):
    import os

    os.makedirs(directory, exist_ok=True)
    paths = []
    for k, st in enumerate(traj.states):
        if k % every and k != len(traj.states) - 1:
            continue
        path = os.path.join(directory, f"{prefix}_{k:04d}.csv")
        N = st.U.shape[0]
        cols = ["node", "x1", "x2"] + [f"U{a + 1}" for a in range(N)] + [f"V{a + 1}" for a in range(N)]
        data = np.column_stack([np.arange(traj.mesh.n_nodes), traj.mesh.nodes, st.U.T, st.V.T])
        np.savetxt(path, data, delimiter=",", header=f"t={st.t:.12g}\n" + ",".join(cols), comments="# ",
                   fmt=["%d"] + ["%.12g"] * (data.shape[1] - 1))
        paths.append(path)
    return paths


def write_manifest(path, config: dict, traj: Trajectory | None = None, extra: dict | None = None):
    import yaml

    doc = {"config": config}
    if traj is not None:
        doc["energy"] = [[float(v) for v in row] for row in traj.energy]
        doc["timings"] = {k: float(v) for k, v in traj.timings.items()}
        if traj.monitor:
            doc["apriori"] = [[float(v) for v in row] for row in traj.monitor]
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)
