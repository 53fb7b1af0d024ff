"""Y*-averages and effective tensors, each with an independent second formula."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fem
from .cell import _as_tensor_quad, grad_quad
from .mesh import Mesh

CROSS_TOL = 1e-2  # relative discretisation tolerance used for flagging


def average(mesh: Mesh, f) -> np.ndarray:
    """(1/|Y|) int_{Y*} f dy with |Y| = 1; f is callable, nodal or quadrature valued.

    Leading tensor axes of array input are kept.
    """
    if callable(f):
        q = mesh.quad_points()
        f = np.broadcast_to(np.asarray(f(q[..., 0], q[..., 1]), float), q.shape[:2])
    f = np.asarray(f, float)
    if f.shape[-1] == mesh.n_nodes and f.shape[-2:] != (mesh.n_triangles, 3):
        f = fem.at_quad(mesh, f)
    return np.sum((f @ fem.QUAD_WEIGHTS) * mesh.element_areas, axis=-1)


@dataclass
class CrossChecked:
    value: np.ndarray
    alternate: np.ndarray
    discrepancy: float  # max-entry difference relative to max(1, |value|)
    consistent: bool
    extra: dict = field(default_factory=dict)


def _rel(a, b):
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(a)))))


def compute_Estar(mesh: Mesh, E, W, tol: float = CROSS_TOL) -> CrossChecked:
    """E*_ij = avg(E_ij + E_ik d_k W_j), checked against the Gram form
    avg((e_i + grad W_i)^T E (e_j + grad W_j))."""
    E = _as_tensor_quad(mesh, E, (2, 2))
    G = grad_quad(mesh, W)  # (j, k, m, 3): d_k W_j
    C = np.eye(2)[:, :, None, None] + G  # C[j, k] = delta_jk + d_k W_j
    value = average(mesh, E + np.einsum("ikmq,jkmq->ijmq", E, G))
    gram = average(mesh, np.einsum("ikmq,klmq,jlmq->ijmq", C, E, C))
    d = _rel(value, gram)
    return CrossChecked(value, gram, d, d <= 5 * tol)


def compute_Dstar(mesh: Mesh, D, E, Z, W, tol: float = CROSS_TOL) -> CrossChecked:
    """D*_jab = avg(D_jab + (E grad Z_ab)_j), checked against avg(D_jab + sum_k d_k W_j D_kab).

    extra['identity'] holds the relative mismatch of
    int sum_k d_k W_j D_kab  versus  int (E grad Z_ab)_j.
    """
    E = _as_tensor_quad(mesh, E, (2, 2))
    D = np.asarray(D, float)
    N = D.shape[1]
    D = _as_tensor_quad(mesh, D, (2, N, N))
    EgZ = np.einsum("jlmq,ablmq->jabmq", E, grad_quad(mesh, Z))
    WD = np.einsum("jkmq,kabmq->jabmq", grad_quad(mesh, W), D)
    value = average(mesh, D + EgZ)
    alt = average(mesh, D + WD)
    iw, ie = average(mesh, WD), average(mesh, EgZ)
    ident = float(np.max(np.abs(iw - ie)) / max(float(np.max(np.abs(ie))), 1e-300)) if np.any(ie) or np.any(iw) else 0.0
    d = _rel(value, alt)
    return CrossChecked(value, alt, d, d <= 5 * tol, {"identity": ident, "WD": iw, "EgradZ": ie})


def cell_averages(mesh: Mesh, coeffs, t, x) -> dict:
    out = {}
    for name in ("M", "H", "K"):
        out[name] = average(mesh, fem.coefficient_at_quad(coeffs, name, t, mesh, x=x))
    return out


@dataclass
class EffectiveTensors:
    """Effective data tabulated over macro points (t, x)."""

    points: list  # [(t, x1, x2)]
    Estar: np.ndarray  # (p, d, d)
    Dstar: np.ndarray  # (p, d, N, N)
    Mbar: np.ndarray  # (p, N, N)
    Hbar: np.ndarray  # (p, N)
    Kbar: np.ndarray  # (p, N, N)
    porosity: float = 1.0

    @property
    def constant(self) -> bool:
        return len(self.points) == 1

    def at(self, k: int = 0) -> dict:
        return {"E": self.Estar[k], "D": self.Dstar[k], "M": self.Mbar[k], "H": self.Hbar[k], "K": self.Kbar[k]}

    def write_csv(self, path) -> None:
        d, N = self.Estar.shape[1], self.Mbar.shape[1]
        cols = ["t", "x1", "x2"]
        cols += [f"E*{i + 1}{j + 1}" for i in range(d) for j in range(d)]
        cols += [f"D*{i + 1}{a + 1}{b + 1}" for i in range(d) for a in range(N) for b in range(N)]
        cols += [f"Mbar{a + 1}{b + 1}" for a in range(N) for b in range(N)]
        cols += [f"Hbar{a + 1}" for a in range(N)]
        cols += [f"Kbar{a + 1}{b + 1}" for a in range(N) for b in range(N)]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for k, p in enumerate(self.points):
                row = list(p) + [
                    *self.Estar[k].ravel(), *self.Dstar[k].ravel(), *self.Mbar[k].ravel(),
                    *self.Hbar[k].ravel(), *self.Kbar[k].ravel(),
                ]
                fh.write(",".join(f"{v:.15g}" for v in row) + "\n")


def tabulate(mesh: Mesh, coeffs, points) -> EffectiveTensors:
    """Effective tensors at each macro point (t, x1, x2)."""
    from .cell import compute_cell_functions

    rows = []
    for t, x1, x2 in points:
        _, Es, Ds, av = compute_cell_functions(mesh, coeffs, t, (x1, x2), second_order=False)
        rows.append((Es.value, Ds.value, av["M"], av["H"], av["K"]))
    cols = [np.array(c) for c in zip(*rows)]
    return EffectiveTensors([tuple(p) for p in points], *cols, porosity=float(mesh.element_areas.sum()))
