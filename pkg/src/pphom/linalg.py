"""Sparse assembly buffers and constrained linear solves."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

DIRECT_MAX = 20000


class SolverError(RuntimeError):
    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message if residual is None else f"{message} (residual {residual:.3e})")
        self.residual = residual


class SparseMatrix:
    """Triplet buffer that compresses to CSR on finalize()."""

    def __init__(self, shape):
        self.shape = tuple(int(s) for s in shape)
        self._rows, self._cols, self._vals = [], [], []
        self.csr = None

    def add(self, rows, cols, vals):
        if self.csr is not None:
            raise RuntimeError("matrix already finalized")
        rows, cols, vals = np.broadcast_arrays(np.asarray(rows), np.asarray(cols), np.asarray(vals, float))
        self._rows.append(rows.ravel())
        self._cols.append(cols.ravel())
        self._vals.append(vals.ravel())
        return self

    def finalize(self) -> sp.csr_matrix:
        if self.csr is None:
            r = np.concatenate(self._rows) if self._rows else np.zeros(0, int)
            c = np.concatenate(self._cols) if self._cols else np.zeros(0, int)
            v = np.concatenate(self._vals) if self._vals else np.zeros(0)
            A = sp.coo_matrix((v, (r, c)), shape=self.shape).tocsr()
            A.sum_duplicates()
            A.eliminate_zeros()
            self.csr = A
            self._rows = self._cols = self._vals = None
        return self.csr

    @classmethod
    def from_csr(cls, A):
        m = cls(A.shape)
        m.csr = sp.csr_matrix(A)
        m.csr.eliminate_zeros()
        return m


def write_coo(A, path) -> None:
    """Coordinate text dump: header 'rows cols nnz', then 1-based 'i j value' lines."""
    A = sp.coo_matrix(A)
    with open(path, "w") as fh:
        fh.write(f"{A.shape[0]} {A.shape[1]} {A.nnz}\n")
        for i, j, v in zip(A.row, A.col, A.data):
            fh.write(f"{i + 1} {j + 1} {v:.17g}\n")


def read_coo(path) -> sp.csr_matrix:
    data = np.loadtxt(path, skiprows=1, ndmin=2)
    with open(path) as fh:
        n, m, _ = (int(s) for s in fh.readline().split())
    return sp.coo_matrix((data[:, 2], (data[:, 0].astype(int) - 1, data[:, 1].astype(int) - 1)), shape=(n, m)).tocsr()


@dataclass
class LinearSystem:
    matrix: object  # SparseMatrix or scipy sparse matrix
    rhs: np.ndarray  # (n,) or (n, k)
    constraint: str = "none"  # none | zero_mean | dirichlet
    weights: np.ndarray | None = None  # zero_mean weight vector
    dirichlet_nodes: np.ndarray | None = None
    dirichlet_values: np.ndarray | float = 0.0
    info: dict = field(default_factory=dict)

    def csr(self):
        A = self.matrix.finalize() if isinstance(self.matrix, SparseMatrix) else self.matrix
        return sp.csr_matrix(A)


def apply_dirichlet(A, b, nodes, values=0.0):
    """Replace the rows of `nodes` by identity rows and set b to the prescribed values."""
    A = sp.csr_matrix(A, copy=True)
    nodes = np.asarray(nodes, dtype=np.int64)
    keep = np.ones(A.shape[0])
    keep[nodes] = 0.0
    A = sp.diags(keep) @ A
    A = A + sp.csr_matrix((np.ones(len(nodes)), (nodes, nodes)), shape=A.shape)
    A.eliminate_zeros()
    b = np.array(b, dtype=float, copy=True)
    b[nodes] = np.broadcast_to(np.asarray(values, float), b[nodes].shape) if np.ndim(values) else values
    return A.tocsr(), b


def bordered(A, w):
    """Saddle-point matrix [[A, w], [w^T, 0]] for a single mean constraint."""
    w = np.asarray(w, float).reshape(-1, 1)
    return sp.bmat([[A, sp.csr_matrix(w)], [sp.csr_matrix(w.T), None]], format="csc")


class Factorized:
    """Reusable solver for a fixed matrix; direct LU up to `direct_max`, else BiCGStab."""

    def __init__(self, A, tol: float = 1e-10, max_iter: int | None = None, direct_max: int = DIRECT_MAX):
        self.A = sp.csc_matrix(A)
        self.n = self.A.shape[0]
        self.tol = tol
        self.max_iter = max_iter or 10 * self.n
        self.direct = self.n <= direct_max
        if self.direct:
            try:
                self._lu = spla.splu(self.A)
            except RuntimeError as exc:
                raise SolverError(f"matrix is singular: {exc}") from None
            d = self._lu.U.diagonal()
            if np.any(d == 0) or not np.all(np.isfinite(d)):
                raise SolverError("matrix is singular: zero pivot in LU factorization")
        else:
            diag = self.A.diagonal()
            diag = np.where(diag == 0, 1.0, diag)
            self._prec = spla.LinearOperator(self.A.shape, matvec=lambda x: x / diag)

    def _one(self, b, x0=None):
        if self.direct:
            return self._lu.solve(b)
        bn = max(np.linalg.norm(b), 1e-300)
        x = x0
        left = self.max_iter
        counter = [0]

        def count(_):
            counter[0] += 1

        # Breakdown (info < 0) or a recursive residual that drifted away from
        # the true one is handled by restarting from the current iterate.
        rtol = self.tol
        res = np.inf
        for _ in range(20):
            counter[0] = 0
            x, info = spla.bicgstab(self.A, b, x0=x, rtol=rtol, atol=0.0, maxiter=left, M=self._prec, callback=count)
            left -= counter[0]
            res = np.linalg.norm(self.A @ x - b) / bn
            if res <= self.tol or left <= 0:
                break
            rtol = 0.1 * rtol if info == 0 else rtol
        if res > self.tol:
            raise SolverError(f"BiCGStab did not converge within {self.max_iter} iterations", res)
        return x

    def solve(self, b, x0=None):
        """Solve for one or several right-hand sides; x0 warm-starts the iterative path."""
        b = np.asarray(b, float)
        if b.ndim == 1 or self.direct:
            x = self._one(b, x0)
        else:
            x = np.column_stack([self._one(c) for c in b.T])
        check_residual(self.A, x, b, self.tol if self.direct else 10 * self.tol)
        return x


def check_residual(A, x, b, tol):
    """Post-hoc verification ||Ax - b|| <= tol ||b|| (column-wise), with a floor for b = 0."""
    r = A @ x - b
    rn = np.linalg.norm(np.atleast_2d(r.T).T, axis=0)
    bn = np.linalg.norm(np.atleast_2d(b.T).T, axis=0)
    scale = np.maximum(bn, 1e-14 * max(1.0, abs(A).max() * np.abs(x).max() if x.size else 1.0))
    worst = float(np.max(rn / scale)) if rn.size else 0.0
    # direct factorizations are limited by conditioning, so allow a modest multiple
    if worst > max(tol, 1e-8):
        raise SolverError("residual check failed", worst)
    return worst


def _looks_singular(A) -> bool:
    one = np.ones(A.shape[0])
    return np.linalg.norm(A @ one) <= 1e-10 * max(1.0, abs(A).max()) * np.sqrt(A.shape[0])


def solve(sys: LinearSystem, tol: float = 1e-10, max_iter: int | None = None, direct_max: int = DIRECT_MAX):
    """Solve a LinearSystem; returns x (the multiplier of a bordered system is dropped)."""
    A = sys.csr()
    b = np.asarray(sys.rhs, float)
    n = A.shape[0]
    if A.shape[0] != A.shape[1] or b.shape[0] != n:
        raise ValueError(f"dimension mismatch: matrix {A.shape}, rhs {b.shape}")
    if sys.constraint == "dirichlet":
        A, b = apply_dirichlet(A, b, sys.dirichlet_nodes, sys.dirichlet_values)
    elif sys.constraint == "zero_mean":
        w = np.ones(n) if sys.weights is None else np.asarray(sys.weights, float)
        K = bordered(A, w)
        extra = np.zeros((1,) + b.shape[1:])
        x = Factorized(K, tol, max_iter, direct_max).solve(np.concatenate([b, extra]))
        x = x[:n]
        sys.info["mean_violation"] = float(np.max(np.abs(w @ x)))
        return x
    elif sys.constraint != "none":
        raise ValueError(f"unknown constraint {sys.constraint!r}")
    if sys.constraint == "none" and _looks_singular(A):
        raise SolverError("matrix annihilates constants; add a zero_mean or dirichlet constraint")
    return Factorized(A, tol, max_iter, direct_max).solve(b)
