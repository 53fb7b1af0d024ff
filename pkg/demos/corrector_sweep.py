"""Corrector error |Phi^eps| across an eps-sweep for the scalar disk problem.

Defaults reproduce the acceptance configuration (about 35 s on one core);
--multiplier changes the cut-off threshold a*eps to show how much of the
error sits in the boundary strip.
"""
from __future__ import annotations

import argparse
import logging

import numpy as np

from pphom.coefficients import CoefficientSet
from pphom.corrector import SweepConfig, run_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--K", type=float, default=0.0, help="reaction coupling K")
    ap.add_argument("--resolution", type=int, default=16)
    ap.add_argument("--eps", type=float, nargs="+", default=[1 / 4, 1 / 8, 1 / 16])
    ap.add_argument("--multiplier", type=float, default=1.0)
    ap.add_argument("--T", type=float, default=0.25)
    ap.add_argument("--dt", type=float, default=1 / 200)
    ap.add_argument("--self-error", action="store_true")
    ap.add_argument("--csv", help="write the report here")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    c = CoefficientSet.from_arrays(1, M=np.eye(1), E=np.eye(2), H=np.ones(1), K=args.K * np.ones((1, 1)),
                                   L=np.eye(1), G=np.eye(1))
    cfg = SweepConfig(args.eps, c, resolution=args.resolution, T=args.T, dt=args.dt, direct_max=10**6,
                      cutoff_multiplier=args.multiplier, self_error=args.self_error)
    rep = run_sweep(cfg)
    print(f"{'eps':>8s} {'nodes':>7s} {'|Phi|':>10s} {'|Psi|':>10s} {'ratio':>7s} {'rate':>6s} {'Psi ok':>6s} {'sec':>6s}")
    for r in rep.rows:
        if not r.ok:
            print(f"{r.eps:8.4f} failed: {r.error}")
            continue
        print(f"{r.eps:8.4f} {r.fine_nodes:7d} {r.phi_norm:10.4e} {r.psi_norm:10.4e} {r.ratio:7.3f} "
              f"{r.pair_rate:6.3f} {str(r.psi_bound_ok):>6s} {r.seconds:6.1f}")
        if args.self_error:
            print(f"{'':8s} self-error: h {r.self_error_h:.2e}, dt {r.self_error_dt:.2e}")
    print(f"fitted slope {rep.slope:.3f}, Psi slope {rep.psi_slope:.3f} [{rep.slope_status}]")
    if args.csv:
        rep.write_csv(args.csv)


if __name__ == "__main__":
    main()
