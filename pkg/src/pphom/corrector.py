"""Corrector expansion, error functions and the epsilon sweep.

The truncated two-scale expansion on the perforated mesh is

    V_exp = V0 + M_eps (eps V1 + eps^2 V2),   U_exp = U0 + M_eps (eps U1 + eps^2 U2),

with V1, V2 built from cell functions evaluated at y = x/eps and macro
derivatives of V0; U1, U2 follow V1, V2 through the same Rothe update
as the fine solver, starting from zero.
"""
from __future__ import annotations

import logging
import math
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import fem
from .cell import CellFunctions, compute_cell_functions
from .constants import BoundConstants, NormGrid, bound_shape, optimize_eta, sample_norms
from .mesh import EXTERNAL, CellSpec, DomainSpec, Mesh, MeshError, build_cell_mesh, build_perforated_domain_mesh, build_square_mesh
from .solvers import DerivativeRecovery, MacroCoefficients, TimeGrid, Trajectory, _LG, rothe_step, run_fine, run_macro
from .linalg import DIRECT_MAX

log = logging.getLogger(__name__)

INRADIUS = 0.5  # of the unit square


class ExpansionError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# cut-off


def boundary_distance(points) -> np.ndarray:
    p = np.asarray(points, float)
    return np.minimum(np.minimum(p[..., 0], 1 - p[..., 0]), np.minimum(p[..., 1], 1 - p[..., 1]))


@dataclass
class CutoffField:
    values: np.ndarray  # nodal M_eps
    epsilon: float
    thresholds: tuple  # (inner, outer) distances
    grad_bound: float  # max over elements of eps |grad M_eps|


def build_cutoff(mesh: Mesh, epsilon: float, multiplier: float = 1.0) -> CutoffField:
    """Piecewise-linear ramp in d = dist(x, boundary): 0 for d <= a, 1 for d >= 2a, a = multiplier * eps."""
    if len(mesh.edges_with_tag(EXTERNAL)) == 0:
        raise MeshError("mesh carries no external boundary tags")
    a = multiplier * epsilon
    if a >= INRADIUS:
        raise ValueError(f"cut-off threshold {a:g} reaches the domain inradius {INRADIUS}; M_eps would vanish")
    d = boundary_distance(mesh.nodes)
    M = np.clip((d - a) / a, 0.0, 1.0)
    g = fem.element_gradients(mesh, M)
    return CutoffField(M, epsilon, (a, 2 * a), float(epsilon * np.max(np.linalg.norm(g, axis=-1))))


# --------------------------------------------------------------------------
# cell functions on the fine mesh


class CellFunctionField:
    """Cell functions as fields of (t, x, y); solved once when the data do not depend on x and t,
    otherwise at the centre of each eps-cell and per requested time."""

    def __init__(self, cell_mesh: Mesh, coeffs):
        self.cell_mesh = cell_mesh
        self.coeffs = coeffs
        self.x_dep = coeffs.depends_on("MEDHK", "x1", "x2")
        self.t_dep = coeffs.depends_on("MEDHK", "t")
        self._cache = {}
        self._loc = {}

    def at(self, t, x=(0.5, 0.5)) -> CellFunctions:
        key = (t if self.t_dep else 0.0, tuple(x) if self.x_dep else (0.5, 0.5))
        if key not in self._cache:
            self._cache[key] = compute_cell_functions(self.cell_mesh, self.coeffs, key[0], key[1])[0]
        return self._cache[key]

    def _locate(self, points, eps):
        key = (id(points), eps)
        if key not in self._loc:
            y = np.mod(points / eps, 1.0)
            y[np.isclose(y, 1.0, rtol=0, atol=1e-12)] = 0.0
            tri, bary = self.cell_mesh.locate(y, tol=1e-8)
            if np.any(tri < 0):
                k = int(np.argmax(tri < 0))
                raise ExpansionError(
                    f"fine node {points[k]} maps to y={y[k]} inside the hole: fine and cell meshes are inconsistent"
                )
            cells = np.clip(np.floor(points / eps + 1e-9).astype(int), 0, int(round(1 / eps)) - 1)
            self._loc[key] = (tri, bary, cells)
        return self._loc[key]

    def evaluate(self, t, points, eps) -> dict:
        """Fields name -> array (..., p) at the fine points."""
        tri, bary, cells = self._locate(points, eps)
        nodes = self.cell_mesh.triangles[tri]

        def interp(cf):
            out = {}
            for k in CellFunctions.FIELDS:
                v = getattr(cf, k)
                if v is not None:
                    out[k] = np.einsum("...pa,pa->...p", np.asarray(v)[..., nodes], bary)
            return out

        if not self.x_dep:
            return interp(self.at(t))
        eps_n = int(round(1 / eps))
        flat = cells[:, 1] * eps_n + cells[:, 0]
        result = None
        for c in np.unique(flat):
            sel = flat == c
            centre = ((c % eps_n + 0.5) * eps, (c // eps_n + 0.5) * eps)
            vals = interp(self.at(t, centre))
            if result is None:
                result = {k: np.zeros(v.shape) for k, v in vals.items()}
            for k, v in vals.items():
                result[k][..., sel] = v[..., sel]
        return result


@dataclass
class ExpansionStep:
    t: float
    V0: np.ndarray  # (N, p) macro fields at the fine nodes
    U0: np.ndarray
    V1: np.ndarray
    V2: np.ndarray
    U1: np.ndarray
    U2: np.ndarray

    def assemble(self, eps, cutoff):
        Mc = cutoff.values if hasattr(cutoff, "values") else cutoff
        V = self.V0 + Mc * (eps * self.V1 + eps**2 * self.V2)
        U = self.U0 + Mc * (eps * self.U1 + eps**2 * self.U2)
        return V, U


def first_corrector(cf: dict, V0, gV0):
    """V1_a = W_k d_k V0_a + Z_ab V0_b;  gV0 has shape (N, p, 2)."""
    return np.einsum("kp,apk->ap", cf["W"], gV0) + np.einsum("abp,bp->ap", cf["Z"], V0)


def second_corrector(cf: dict, V0, U0, gV0, hV0):
    """V2_a = P_a + Q0_ab V0_b + R0_ab U0_b + Q1_kab d_k V0_b + Q2_jk d_j d_k V0_a."""
    return (
        cf["P"]
        + np.einsum("abp,bp->ap", cf["Q0"], V0)
        + np.einsum("abp,bp->ap", cf["R0"], U0)
        + np.einsum("kabp,bpk->ap", cf["Q1"], gV0)
        + np.einsum("jkp,apjk->ap", cf["Q2"], hV0)
    )


def expansion_series(fine_mesh: Mesh, macro_traj: Trajectory, cells: CellFunctionField, eps: float, coeffs):
    """Yield ExpansionStep for every macro time slice (the trajectory must keep every step)."""
    macro = macro_traj.mesh
    grid = macro_traj.grid
    if len(macro_traj.states) != grid.steps + 1:
        raise ValueError("the macro trajectory must store every time step")
    tri, bary = macro.locate(fine_mesh.nodes, tol=1e-8)
    if np.any(tri < 0):
        raise ExpansionError("fine nodes outside the macro mesh")
    mnodes = macro.triangles[tri]

    def interp(v):
        return np.einsum("...pa,pa->...p", np.asarray(v)[..., mnodes], bary)

    rec = DerivativeRecovery(macro)
    L_at, G_at = _LG(coeffs, fine_mesh)
    N = coeffs.N
    U1 = np.zeros((N, fine_mesh.n_nodes))
    U2 = np.zeros_like(U1)
    pts = fine_mesh.nodes
    for k, st in enumerate(macro_traj.states):
        g, h = rec(st.V)  # (N, n, 2), (N, n, 2, 2)
        V0, U0 = interp(st.V), interp(st.U)
        gV0 = np.moveaxis(interp(np.moveaxis(g, -1, -2)), -2, -1)
        hV0 = np.moveaxis(interp(np.moveaxis(h, 1, -1)), -1, 1)
        cf = cells.evaluate(st.t, pts, eps)
        V1 = first_corrector(cf, V0, gV0)
        V2 = second_corrector(cf, V0, U0, gV0, hV0)
        yield ExpansionStep(st.t, V0, U0, V1, V2, U1.copy(), U2.copy())
        if k < grid.steps:
            Lk, Gk = L_at(st.t + grid.dt), G_at(st.t)
            U1 = rothe_step(U1, V1, grid.dt, Lk, Gk)
            U2 = rothe_step(U2, V2, grid.dt, Lk, Gk)


def reconstruct_expansion(fine_mesh, macro_traj, cells, eps, t, coeffs, cutoff=None):
    """(V_exp, U_exp) on the fine mesh at time t."""
    cutoff = cutoff if cutoff is not None else build_cutoff(fine_mesh, eps)
    for step in expansion_series(fine_mesh, macro_traj, cells, eps, coeffs):
        if abs(step.t - t) <= 1e-12 * max(1.0, t):
            return step.assemble(eps, cutoff)
    raise ValueError(f"time {t} is not on the trajectory's grid")


def error_norms(V_eps, U_eps, V_exp, U_exp, mesh: Mesh):
    """(|grad(V_eps - V_exp)|_L2, |U_eps - U_exp|_H1) over all components."""
    shapes = {np.shape(a) for a in (V_eps, U_eps, V_exp, U_exp)}
    if len(shapes) != 1 or np.shape(V_eps)[-1] != mesh.n_nodes:
        raise ValueError(f"fields do not live on the same mesh: shapes {sorted(shapes)}, mesh has {mesh.n_nodes} nodes")
    dV = np.atleast_2d(np.asarray(V_eps) - V_exp)
    dU = np.atleast_2d(np.asarray(U_eps) - U_exp)
    phi = math.sqrt(sum(fem.h1_seminorm(mesh, v) ** 2 for v in dV))
    psi = math.sqrt(sum(fem.h1_norm(mesh, u) ** 2 for u in dU))
    return phi, psi


# --------------------------------------------------------------------------
# sweep


@dataclass
class SweepConfig:
    epsilons: list
    coeffs: object
    hole_shape: str = "disk"
    hole_center: tuple = (0.5, 0.5)
    hole_radius: float = 0.25
    resolution: int = 16
    T: float = 0.25
    dt: float = 1 / 200
    tol: float = 1e-10
    direct_max: int = DIRECT_MAX
    cutoff_multiplier: float = 1.0
    eta_objective: str = "min_lambda_plus_mu"
    self_error: bool = False
    threads: int = 1
    norm_grid: int = 33


@dataclass
class SweepRow:
    eps: float
    phi_norm: float = float("nan")
    psi_norm: float = float("nan")
    bound: float = float("nan")
    ratio: float = float("nan")
    pair_rate: float = float("nan")
    psi_pair_rate: float = float("nan")
    resolution: int = 0
    fine_nodes: int = 0
    macro_nodes: int = 0
    phi_l2: float = float("nan")
    psi_l2: float = float("nan")
    psi_bound_ok: bool | None = None
    psi_bound_margin: float = float("nan")  # min over logged times of rhs - lhs
    self_error_h: float = float("nan")
    self_error_dt: float = float("nan")
    cutoff_grad: float = float("nan")
    seconds: float = 0.0
    error: str | None = None
    history: dict = field(default_factory=dict, repr=False)

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class CorrectorReport:
    rows: list
    constants: BoundConstants | None
    calibration: float = float("nan")
    slope: float = float("nan")
    intercept: float = float("nan")
    psi_slope: float = float("nan")
    slope_status: str = "ok"  # ok | degenerate | insufficient points
    T: float = 0.0

    def valid(self):
        return [r for r in self.rows if r.ok]

    def ratio_nonincreasing(self, rtol: float = 0.0) -> bool:
        rs = [r.ratio for r in sorted(self.valid(), key=lambda r: -r.eps)]
        return all(b <= a * (1 + rtol) for a, b in zip(rs, rs[1:]))

    def write_csv(self, path) -> None:
        cols = ["eps", "phi_norm", "psi_norm", "bound", "ratio", "pair_rate", "psi_pair_rate", "resolution",
                "fine_nodes", "macro_nodes", "self_error_h", "self_error_dt", "psi_bound_ok", "error"]
        with open(path, "w") as fh:
            fh.write(f"# slope={self.slope:.6g} psi_slope={self.psi_slope:.6g} status={self.slope_status} "
                     f"calibration={self.calibration:.6g} T={self.T:g}\n")
            fh.write(",".join(cols) + "\n")
            for r in self.rows:
                vals = []
                for c in cols:
                    v = getattr(r, c)
                    vals.append("" if v is None else (f"{v:.10g}" if isinstance(v, float) else str(v).replace(",", ";")))
                fh.write(",".join(vals) + "\n")

    def write_plot_data(self, path) -> None:
        """Log-log points and the fitted line, one 'series,log_eps,log_value' record per line."""
        with open(path, "w") as fh:
            fh.write("series,log_eps,log_value\n")
            for r in self.valid():
                fh.write(f"phi,{math.log(r.eps):.12g},{math.log(r.phi_norm):.12g}\n")
                fh.write(f"psi,{math.log(r.eps):.12g},{math.log(r.psi_norm):.12g}\n")
                fh.write(f"bound,{math.log(r.eps):.12g},{math.log(r.bound):.12g}\n")
            if self.slope_status == "ok":
                for r in self.valid():
                    x = math.log(r.eps)
                    fh.write(f"fit,{x:.12g},{self.intercept + self.slope * x:.12g}\n")


def fit_slope(eps, values):
    """Least-squares slope and intercept of log(values) against log(eps)."""
    x, y = np.log(np.asarray(eps, float)), np.log(np.asarray(values, float))
    slope, intercept = np.polyfit(x, y, 1)
    return float(slope), float(intercept)


def psi_bound_check(times, psi_sq, phi_sq, l, G_N):
    """Discrete |Psi|^2(t_n) <= sum_{j<n} dt e^{l (t_n - t_j)} G_N |Phi|^2(t_j); returns margins rhs - lhs."""
    times = np.asarray(times)
    margins = []
    for n in range(len(times)):
        dt = np.diff(times[: n + 1])
        rhs = float(np.sum(dt * np.exp(l * (times[n] - times[:n])) * G_N * np.asarray(phi_sq[:n])))
        margins.append(rhs - psi_sq[n])
    return np.array(margins)


def _meshes(cfg: SweepConfig, eps: float, resolution: int):
    cspec = CellSpec(cfg.hole_shape, tuple(cfg.hole_center), cfg.hole_radius, resolution)
    cell = build_cell_mesh(cspec)
    fine = build_perforated_domain_mesh(DomainSpec(eps), cspec, cell)
    macro = build_square_mesh(int(round(1 / eps)) * resolution)
    return cell, fine, macro


def measure(cfg: SweepConfig, eps: float, resolution: int, dt: float, bc: BoundConstants | None = None):
    """Fine and macro runs plus reconstruction at one eps; returns per-time norm histories."""
    cell, fine, macro = _meshes(cfg, eps, resolution)
    grid = TimeGrid(cfg.T, dt)
    fine_traj = run_fine(fine, cfg.coeffs, grid, eps, cfg.tol, cfg.direct_max)
    mc = MacroCoefficients(cell, cfg.coeffs, macro)
    macro_traj = run_macro(macro, mc, cfg.coeffs, grid, cfg.tol, cfg.direct_max)
    cells = CellFunctionField(cell, cfg.coeffs)
    cutoff = build_cutoff(fine, eps, cfg.cutoff_multiplier)
    hist = {k: [] for k in ("t", "phi", "psi", "phi_h1", "phi_l2", "psi_l2")}
    for st, step in zip(fine_traj.states, expansion_series(fine, macro_traj, cells, eps, cfg.coeffs)):
        Vx, Ux = step.assemble(eps, cutoff)
        phi, psi = error_norms(st.V, st.U, Vx, Ux, fine)
        dV, dU = st.V - Vx, st.U - Ux
        hist["t"].append(st.t)
        hist["phi"].append(phi)
        hist["psi"].append(psi)
        hist["phi_h1"].append(math.sqrt(sum(fem.h1_norm(fine, v) ** 2 for v in dV)))
        hist["phi_l2"].append(math.sqrt(sum(fem.l2_norm(fine, v) ** 2 for v in dV)))
        hist["psi_l2"].append(math.sqrt(sum(fem.l2_norm(fine, u) ** 2 for u in dU)))
    return {k: np.array(v) for k, v in hist.items()}, fine, macro, cutoff


def _run_row(cfg: SweepConfig, eps: float, bc):
    row = SweepRow(eps, resolution=cfg.resolution)
    t0 = time.perf_counter()
    try:
        hist, fine, macro, cutoff = measure(cfg, eps, cfg.resolution, cfg.dt, bc)
        row.fine_nodes, row.macro_nodes = fine.n_nodes, macro.n_nodes
        row.cutoff_grad = cutoff.grad_bound
        row.phi_norm, row.psi_norm = float(hist["phi"][-1]), float(hist["psi"][-1])
        row.phi_l2, row.psi_l2 = float(hist["phi_l2"][-1]), float(hist["psi_l2"][-1])
        row.history = hist
        if bc is not None:
            margins = psi_bound_check(hist["t"], hist["psi"] ** 2, hist["phi_h1"] ** 2, bc.l, bc.G_N)
            row.psi_bound_margin = float(margins.min())
            row.psi_bound_ok = bool(np.all(margins >= -1e-12 * max(1.0, float(np.max(hist["psi"] ** 2)))))
        if cfg.self_error:
            h2, *_ = measure(cfg, eps, 2 * cfg.resolution, cfg.dt, bc)
            d2, *_ = measure(cfg, eps, cfg.resolution, cfg.dt / 2, bc)
            row.self_error_h = abs(float(h2["phi"][-1]) - row.phi_norm)
            row.self_error_dt = abs(float(d2["phi"][-1]) - row.phi_norm)
    except Exception as exc:  # one failed eps-row must not abort the sweep
        log.error("eps=%g failed: %s", eps, exc)
        log.debug("%s", traceback.format_exc())
        row.error = f"{type(exc).__name__}: {exc}"
    row.seconds = time.perf_counter() - t0
    return row


def sweep_constants(cfg: SweepConfig) -> BoundConstants:
    norms = sample_norms(cfg.coeffs, NormGrid(cfg.norm_grid, cfg.T))
    return optimize_eta(norms, cfg.eta_objective)[1]


def run_sweep(cfg: SweepConfig, bc: BoundConstants | None = None) -> CorrectorReport:
    for e in cfg.epsilons:
        DomainSpec(e)  # 1/eps must be an integer
    if bc is None:
        try:
            bc = sweep_constants(cfg)
        except Exception as exc:
            log.warning("bound constants unavailable: %s", exc)
    eps_list = sorted(cfg.epsilons, reverse=True)
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            rows = list(pool.map(lambda e: _run_row(cfg, e, bc), eps_list))
    else:
        rows = [_run_row(cfg, e, bc) for e in eps_list]

    report = CorrectorReport(rows, bc, T=cfg.T)
    good = report.valid()
    for a, b in zip(good, good[1:]):
        if a.phi_norm > 0 and b.phi_norm > 0:
            b.pair_rate = math.log(a.phi_norm / b.phi_norm) / math.log(a.eps / b.eps)
        if a.psi_norm > 0 and b.psi_norm > 0:
            b.psi_pair_rate = math.log(a.psi_norm / b.psi_norm) / math.log(a.eps / b.eps)
    if bc is not None and good:
        e0 = good[0]
        shape0 = float(bound_shape(bc, e0.eps, cfg.T))
        report.calibration = e0.phi_norm / shape0 if shape0 > 0 else float("nan")
        for r in good:
            r.bound = float(bound_shape(bc, r.eps, cfg.T, report.calibration))
            r.ratio = r.phi_norm / r.bound if r.bound > 0 else float("nan")
    scale = max([1.0] + [float(np.max(np.abs(r.history.get("phi", [0])))) for r in good])
    if good and all(r.phi_norm <= 1e3 * cfg.tol * scale for r in good):
        report.slope_status = "degenerate"
    elif len(good) < 3:
        report.slope_status = "insufficient points"
    else:
        report.slope, report.intercept = fit_slope([r.eps for r in good], [r.phi_norm for r in good])
        report.psi_slope, _ = fit_slope([r.eps for r in good], [r.psi_norm for r in good])
    return report


# --------------------------------------------------------------------------
# oscillation lemma


def _gauss_panels(a, b, panel, order=8):
    n = max(1, int(math.ceil((b - a) / panel - 1e-12)))
    g, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, n + 1)
    h = np.diff(edges)
    x = (edges[:-1, None] + (g[None, :] + 1) * h[:, None] / 2).ravel()
    wt = (w[None, :] * h[:, None] / 2).ravel()
    return x, wt


@dataclass
class OscillationRow:
    eps: float
    integral: float
    target: float
    difference: float


def oscillation_check(expr, epsilons, box=(0.9, 1.0), t: float = 0.0, panels_per_period: int = 4, n_y: int = 64):
    """|int_box f(x, x/eps) dx - int_box avg_Y f(x, .) dx| per eps.

    The box (0, a) x (0, b) defaults to a side that is not a multiple of the
    periods, so the oscillatory remainder does not cancel exactly.
    """
    a, b = box
    rows = []
    y = np.arange(n_y) / n_y  # periodic trapezoid rule
    x1, w1 = _gauss_panels(0, a, 1 / 16)
    x2, w2 = _gauss_panels(0, b, 1 / 16)
    X1, X2 = np.meshgrid(x1, x2, indexing="ij")
    if expr.depends_on("y1", "y2"):
        Q, Y1, Y2 = x2[:, None, None], y[None, :, None], y[None, None, :]
        shape = (len(x2), n_y, n_y)
        avg = np.array([np.broadcast_to(expr.evaluate(t, p, Q, Y1, Y2), shape).mean(axis=(1, 2)) for p in x1])
    else:
        avg = np.broadcast_to(expr.evaluate(t, X1, X2, 0.0, 0.0), X1.shape)
    target = float(w1 @ avg @ w2)
    for eps in epsilons:
        x1, w1e = _gauss_panels(0, a, eps / panels_per_period)
        x2, w2e = _gauss_panels(0, b, eps / panels_per_period)
        X1, X2 = np.meshgrid(x1, x2, indexing="ij")
        vals = np.broadcast_to(expr.evaluate(t, X1, X2, X1 / eps, X2 / eps), X1.shape)
        val = float(w1e @ vals @ w2e)
        rows.append(OscillationRow(float(eps), val, target, abs(val - target)))
    return rows
