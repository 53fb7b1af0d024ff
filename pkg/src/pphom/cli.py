"""Command-line front end.

    pphom cell --config run.yaml --out out/
    pphom sweep --config sweep.yaml --out out/ --threads 3

Exit status: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass, field

import numpy as np
import yaml

from .cell import CompatibilityError, compute_cell_functions
from .coefficients import (
    CoefficientError,
    CoefficientSet,
    CorrosionParams,
    SampleGrid,
    corrosion_matrices,
    corrosion_preset,
    read_coefficient_file,
    validate_assumptions,
    write_coefficient_file,
)
from .constants import (
    EtaChoices,
    InfeasibleError,
    NormGrid,
    compute_constants,
    default_eta,
    optimize_eta,
    sample_norms,
    theorem4_rates,
    write_rate_csv,
)
from .corrector import ExpansionError, SweepConfig, oscillation_check, run_sweep
from .effective import tabulate
from .expr import EvalError, ParseError, parse_expr
from .linalg import DIRECT_MAX, SolverError
from .mesh import CellSpec, DomainSpec, MeshError, build_cell_mesh, build_perforated_domain_mesh, build_square_mesh
from .solvers import MacroCoefficients, TimeGrid, run_fine, run_macro, write_manifest, write_trajectory_csv

log = logging.getLogger("pphom")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# configuration

SCHEMA = {
    "geometry": {"hole_shape", "hole_center", "hole_radius", "resolution"},
    "coefficients": {"N", "entries", "file", "preset", "params"},
    "time": {"T", "dt"},
    "solver": {"tol", "direct_max"},
    "constants": {"grid", "objective", "q", "p", "eta", "n_tau"},
    "oscillation": {"expressions", "epsilons", "box"},
    "sweep": {"cutoff_multiplier", "self_error"},
}
TOP = set(SCHEMA) | {"epsilon", "epsilons", "macro_resolution", "points", "seed", "save_every"}
ETA_KEYS = {"eta_ibalpha", "eta_alpha", "eta_alphabeta", "eta_tilde_ialphabeta", "eta", "eta1", "eta2", "eta3", "epsilon0"}
CORROSION_KEYS = {"phi", "chi", "mu", "lambda_lame", "gamma1", "gamma2", "kappa_rates", "F_value", "ustar"}


@dataclass
class RunConfig:
    raw: str
    cell: CellSpec
    coeffs: CoefficientSet | None
    T: float = 1.0
    dt: float = 0.01
    tol: float = 1e-10
    direct_max: int = DIRECT_MAX
    epsilon: float | None = None
    epsilons: list = field(default_factory=list)
    macro_resolution: int | None = None
    points: list = field(default_factory=lambda: [(0.0, 0.5, 0.5)])
    seed: int = 0
    save_every: int = 1
    constants: dict = field(default_factory=dict)
    oscillation: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    corrosion: CorrosionParams | None = None

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.T, self.dt)


def _strict(section: str, data, allowed):
    if not isinstance(data, dict):
        raise ConfigError(f"section '{section}' must be a mapping")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in '{section}': {', '.join(map(str, unknown))}")
    return data


def _coefficients(sec: dict, base_dir: str):
    """Returns (CoefficientSet, CorrosionParams or None)."""
    sources = [k for k in ("entries", "file", "preset") if k in sec]
    if len(sources) != 1:
        raise ConfigError("coefficients need exactly one of 'entries', 'file' or 'preset'")
    if "preset" in sec:
        if sec["preset"] != "corrosion":
            raise ConfigError(f"unknown preset {sec['preset']!r}")
        params = _strict("coefficients.params", sec.get("params", {}) or {}, CORROSION_KEYS)
        p = CorrosionParams(**{k: tuple(v) if isinstance(v, list) else v for k, v in params.items()})
        return corrosion_preset(p), p
    if "params" in sec:
        raise ConfigError("'params' only applies to a preset")
    if "file" in sec:
        return read_coefficient_file(os.path.join(base_dir, sec["file"])), None
    if "N" not in sec:
        raise ConfigError("inline coefficients need N")
    entries = {str(k): str(v) for k, v in (sec["entries"] or {}).items()}
    return CoefficientSet.from_entries(entries, int(sec["N"])), None


def _check_eps(e):
    e = float(e)
    n = round(1 / e)
    if not e > 0 or abs(n * e - 1) > 1e-9:
        raise ConfigError(f"1/epsilon must be an integer, got epsilon={e}")
    return 1.0 / n


def load_config(path_or_text, is_text: bool = False) -> RunConfig:
    raw = path_or_text if is_text else open(path_or_text).read()
    base = "." if is_text else os.path.dirname(os.path.abspath(path_or_text))
    try:
        doc = yaml.safe_load(raw) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"YAML parse error: {exc}") from None
    _strict("top level", doc, TOP)
    for sec, keys in SCHEMA.items():
        if sec in doc:
            _strict(sec, doc[sec] or {}, keys)
    geo = doc.get("geometry", {}) or {}
    cell = CellSpec(
        geo.get("hole_shape", "disk"),
        tuple(geo.get("hole_center", (0.5, 0.5))),
        float(geo.get("hole_radius", 0.25)),
        int(geo.get("resolution", 16)),
    )
    coeffs, corrosion = (None, None)
    if "coefficients" in doc:
        coeffs, corrosion = _coefficients(doc["coefficients"] or {}, base)
    t = doc.get("time", {}) or {}
    s = doc.get("solver", {}) or {}
    cfg = RunConfig(
        raw=raw,
        cell=cell,
        coeffs=coeffs,
        T=float(t.get("T", 1.0)),
        dt=float(t.get("dt", 0.01)),
        tol=float(s.get("tol", 1e-10)),
        direct_max=int(s.get("direct_max", DIRECT_MAX)),
        epsilon=_check_eps(doc["epsilon"]) if "epsilon" in doc else None,
        epsilons=[_check_eps(e) for e in doc.get("epsilons", [])],
        macro_resolution=doc.get("macro_resolution"),
        points=[tuple(float(v) for v in p) for p in doc.get("points", [(0.0, 0.5, 0.5)])],
        seed=int(doc.get("seed", 0)),
        save_every=int(doc.get("save_every", 1)),
        constants=dict(doc.get("constants", {}) or {}),
        oscillation=dict(doc.get("oscillation", {}) or {}),
        sweep=dict(doc.get("sweep", {}) or {}),
        corrosion=corrosion,
    )
    if cfg.macro_resolution is not None and (int(cfg.macro_resolution) != cfg.macro_resolution or cfg.macro_resolution < 1):
        raise ConfigError("macro_resolution must be a positive integer")
    if not cfg.tol > 0 or cfg.save_every < 1:
        raise ConfigError("solver.tol must be positive and save_every at least 1")
    cfg.grid  # validates T and dt
    if "eta" in cfg.constants:
        _strict("constants.eta", cfg.constants["eta"], ETA_KEYS)
    for p in cfg.points:
        if len(p) != 3:
            raise ConfigError("points are (t, x1, x2) triples")
    return cfg


def _need(cfg: RunConfig, *what):
    for w in what:
        if w == "coeffs" and cfg.coeffs is None:
            raise ConfigError("this command needs a 'coefficients' section")
        if w == "epsilon" and cfg.epsilon is None:
            raise ConfigError("this command needs 'epsilon'")
        if w == "epsilons" and not cfg.epsilons:
            raise ConfigError("this command needs a non-empty 'epsilons' list")


def _fmt(v) -> str:
    return f"{v:.10g}"


# --------------------------------------------------------------------------
# commands


def cmd_cell(cfg: RunConfig, out: str, args) -> int:
    _need(cfg, "coeffs")
    mesh = build_cell_mesh(cfg.cell)
    eff = tabulate(mesh, cfg.coeffs, cfg.points)
    eff.write_csv(os.path.join(out, "effective.csv"))
    t, x1, x2 = cfg.points[0]
    cf, Es, Ds, _ = compute_cell_functions(mesh, cfg.coeffs, t, (x1, x2))
    cf.write_table(os.path.join(out, "cell_functions.csv"))
    print(f"cell mesh: {mesh.n_nodes} nodes, {mesh.n_triangles} triangles, |Y*| = {eff.porosity:.6f}")
    print(f"{'point':>22s}  {'E*11':>10s} {'E*12':>10s} {'E*21':>10s} {'E*22':>10s}")
    for p, E in zip(eff.points, eff.Estar):
        print(f"{str(tuple(round(v, 4) for v in p)):>22s}  " + " ".join(f"{v:10.6f}" for v in E.ravel()))
    print(f"E* cross-check discrepancy {Es.discrepancy:.3e}, D* cross-check {Ds.discrepancy:.3e}, "
          f"drift identity {Ds.extra['identity']:.3e}")
    write_manifest(os.path.join(out, "manifest.yaml"), {"text": cfg.raw},
                   extra={"Estar": Es.value.tolist(), "porosity": eff.porosity})
    return EXIT_OK


def _write_energy(traj, path):
    with open(path, "w") as fh:
        fh.write("t,U_H1,gradV_L2\n")
        for row in traj.energy:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _monitor_constants(cfg):
    norms = sample_norms(cfg.coeffs, NormGrid(17, cfg.T))
    try:
        return compute_constants(norms, _make_eta(norms, cfg.constants.get("eta")))
    except InfeasibleError:
        try:
            return optimize_eta(norms, "min_lambda_plus_mu")[1]
        except InfeasibleError as exc:
            log.warning("a priori monitor disabled: %s", exc)
            return None


def cmd_fine(cfg: RunConfig, out: str, args) -> int:
    _need(cfg, "coeffs", "epsilon")
    mesh = build_perforated_domain_mesh(DomainSpec(cfg.epsilon), cfg.cell)
    bc = _monitor_constants(cfg)
    traj = run_fine(mesh, cfg.coeffs, cfg.grid, cfg.epsilon, cfg.tol, cfg.direct_max, monitor=bc,
                    save_every=cfg.save_every)
    write_trajectory_csv(traj, os.path.join(out, "fine"))
    _write_energy(traj, os.path.join(out, "fine_energy.csv"))
    write_manifest(os.path.join(out, "manifest.yaml"), {"text": cfg.raw}, traj)
    viol = sum(1 for _, l, r in traj.monitor if l > r * (1 + 1e-9))
    print(f"fine mesh: {mesh.n_nodes} nodes, {mesh.hole_count()} holes, {cfg.grid.steps} steps")
    print(f"{'t':>8s} {'|U|_H1':>12s} {'|grad V|':>12s}")
    for t, u, v in traj.energy[:: max(1, len(traj.energy) // 10)]:
        print(f"{t:8.4f} {u:12.6e} {v:12.6e}")
    if traj.monitor:
        print(f"a priori inequality violated at {viol} of {len(traj.monitor)} steps")
    return EXIT_OK


def cmd_macro(cfg: RunConfig, out: str, args) -> int:
    _need(cfg, "coeffs")
    n = cfg.macro_resolution or (int(round(1 / cfg.epsilon)) * cfg.cell.resolution if cfg.epsilon else 64)
    macro = build_square_mesh(int(n))
    cell = build_cell_mesh(cfg.cell)
    mc = MacroCoefficients(cell, cfg.coeffs, macro)
    traj = run_macro(macro, mc, cfg.coeffs, cfg.grid, cfg.tol, cfg.direct_max, save_every=cfg.save_every)
    write_trajectory_csv(traj, os.path.join(out, "macro"))
    _write_energy(traj, os.path.join(out, "macro_energy.csv"))
    write_manifest(os.path.join(out, "manifest.yaml"), {"text": cfg.raw}, traj)
    print(f"macro mesh: {macro.n_nodes} nodes, {cfg.grid.steps} steps")
    print(f"{'t':>8s} {'|U|_H1':>12s} {'|grad V|':>12s}")
    for t, u, v in traj.energy[:: max(1, len(traj.energy) // 10)]:
        print(f"{t:8.4f} {u:12.6e} {v:12.6e}")
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, out: str, args) -> int:
    _need(cfg, "coeffs", "epsilons")
    sw = _strict("sweep", cfg.sweep, SCHEMA["sweep"])
    scfg = SweepConfig(
        cfg.epsilons, cfg.coeffs, cfg.cell.hole_shape, cfg.cell.hole_center, cfg.cell.hole_radius,
        cfg.cell.resolution, cfg.T, cfg.dt, cfg.tol, cfg.direct_max,
        float(sw.get("cutoff_multiplier", 1.0)),
        cfg.constants.get("objective", "min_lambda_plus_mu"),
        bool(sw.get("self_error", False)), args.threads, int(cfg.constants.get("grid", 33)),
    )
    rep = run_sweep(scfg)
    rep.write_csv(os.path.join(out, "corrector_report.csv"))
    rep.write_plot_data(os.path.join(out, "corrector_plot.csv"))
    print(f"{'eps':>8s} {'nodes':>8s} {'|Phi|':>12s} {'|Psi|':>12s} {'bound':>12s} {'ratio':>8s} {'rate':>7s}")
    for r in rep.rows:
        if r.ok:
            print(f"{r.eps:8.5f} {r.fine_nodes:8d} {r.phi_norm:12.5e} {r.psi_norm:12.5e} {r.bound:12.5e} "
                  f"{r.ratio:8.4f} {r.pair_rate:7.3f}")
        else:
            print(f"{r.eps:8.5f}  failed: {r.error}")
    print(f"slope: {rep.slope:.4f} (Psi {rep.psi_slope:.4f}) [{rep.slope_status}]")
    write_manifest(os.path.join(out, "manifest.yaml"), {"text": cfg.raw},
                   extra={"slope": rep.slope, "psi_slope": rep.psi_slope, "slope_status": rep.slope_status,
                          "seconds": {str(r.eps): r.seconds for r in rep.rows}})
    return EXIT_OK if all(r.ok for r in rep.rows) else EXIT_NUMERIC


def _make_eta(norms, spec):
    if spec is None:
        return default_eta(norms)
    kw = {k: float(v) for k, v in spec.items() if k != "eta_ibalpha"}
    if "eta_ibalpha" in spec:
        return EtaChoices(np.asarray(spec["eta_ibalpha"], float), **kw)
    return default_eta(norms, **kw)


def cmd_constants(cfg: RunConfig, out: str, args) -> int:
    _need(cfg, "coeffs")
    c = cfg.constants
    norms = sample_norms(cfg.coeffs, NormGrid(int(c.get("grid", 33)), cfg.T))
    rep = validate_assumptions(cfg.coeffs, SampleGrid(17, cfg.T))
    if not rep.a3_ok.all():
        raise InfeasibleError(f"drift bound violated for (i, beta, alpha) in {rep.violated_triples()}")
    if c.get("eta"):
        bc = compute_constants(norms, _make_eta(norms, c["eta"]))
    else:
        _, bc = optimize_eta(norms, c.get("objective", "min_mu"))
    bc.write_report(os.path.join(out, "constants.txt"))
    q = float(c.get("q", 0.25))
    p = c.get("p")
    rows, info = theorem4_rates(bc, q, None if p is None else float(p), int(c.get("n_tau", 100)))
    write_rate_csv(rows, os.path.join(out, "rates.csv"))
    for name, value, formula, _ in bc.report()[:14]:
        print(f"{name:12s} {value:14.8g}   {formula}")
    if info.get("empty"):
        print(f"no admissible rescaled time for q={q}")
    else:
        print(f"rate branch {info['branch']}, tau in ({info['tau_min']:.6g}, {info['tau_max']:.6g})"
              + (f", eps threshold {info['eps_threshold']:.6g}" if "eps_threshold" in info else ""))
    return EXIT_OK


def cmd_oscillation(cfg: RunConfig, out: str, args) -> int:
    o = cfg.oscillation
    exprs = o.get("expressions", ["sin(2*pi*y1)"])
    eps = [_check_eps(e) for e in o.get("epsilons", cfg.epsilons or [1 / 8, 1 / 16, 1 / 32])]
    box = tuple(float(v) for v in o.get("box", (0.9, 1.0)))
    with open(os.path.join(out, "oscillation.csv"), "w") as fh:
        fh.write("expression,eps,integral,target,difference\n")
        print(f"{'expression':>24s} {'eps':>9s} {'integral':>14s} {'target':>14s} {'|diff|':>11s}")
        for text in exprs:
            e = parse_expr(text)
            for r in oscillation_check(e, eps, box):
                fh.write(f"\"{text}\",{_fmt(r.eps)},{_fmt(r.integral)},{_fmt(r.target)},{_fmt(r.difference)}\n")
                print(f"{text:>24s} {r.eps:9.5f} {r.integral:14.6e} {r.target:14.6e} {r.difference:11.3e}")
    return EXIT_OK


def cmd_corrosion(cfg: RunConfig, out: str, args) -> int:
    p = cfg.corrosion or CorrosionParams()
    blocks = corrosion_matrices(p)
    coeffs = corrosion_preset(p)
    write_coefficient_file(coeffs, os.path.join(out, "corrosion.coef"))
    det = float(np.linalg.det(blocks["Gtilde"]))
    expect = (p.gamma1**2 - p.gamma2**2) * p.phi[2]
    M = coeffs.evaluate("M")
    rep = validate_assumptions(coeffs, SampleGrid(9, cfg.T))
    print(f"det G~ = {det:.12g}  (gamma1^2 - gamma2^2) phi3 = {expect:.12g}")
    print("M =", np.array2string(M, precision=6))
    print(f"eig(sym M) = {np.linalg.eigvalsh(0.5 * (M + M.T))}")
    print("assumption checks:", "passed" if rep.passed else "; ".join(rep.failures))
    return EXIT_OK if rep.passed else EXIT_NUMERIC


COMMANDS = {
    "cell": cmd_cell,
    "fine": cmd_fine,
    "macro": cmd_macro,
    "sweep": cmd_sweep,
    "constants": cmd_constants,
    "oscillation": cmd_oscillation,
    "corrosion": cmd_corrosion,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="pphom", description="homogenization toolkit for perforated pseudo-parabolic systems")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="YAML run configuration")
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--threads", type=int, default=1, help="concurrent eps-rows in a sweep")
    ap.add_argument("--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config:
            cfg = load_config(args.config)
        elif args.command in ("oscillation", "corrosion"):
            cfg = load_config("{}", is_text=True)
        else:
            raise ConfigError("--config is required for this command")
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        os.makedirs(args.out, exist_ok=True)
    except (ConfigError, CoefficientError, MeshError, ParseError, ValueError, TypeError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    stage = args.command
    try:
        return COMMANDS[args.command](cfg, args.out, args)
    except (ConfigError, CoefficientError, InfeasibleError, ParseError) as exc:
        print(f"config error in {stage}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, CompatibilityError, ExpansionError, MeshError, EvalError, ArithmeticError,
            np.linalg.LinAlgError, ValueError) as exc:
        print(f"numerical failure in {stage}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
