"""Bound constants and rescaled-time rates for the corrosion preset."""
from __future__ import annotations

import argparse

from pphom.coefficients import CorrosionParams, corrosion_preset
from pphom.constants import NormGrid, optimize_eta, sample_norms, theorem4_rates


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--q", type=float, default=0.25)
    ap.add_argument("--p", type=float, default=0.25)
    ap.add_argument("--grid", type=int, default=9)
    args = ap.parse_args()

    norms = sample_norms(corrosion_preset(CorrosionParams()), NormGrid(args.grid))
    for objective in ("min_mu", "min_lambda_plus_mu"):
        _, bc = optimize_eta(norms, objective)
        print(f"objective {objective}")
        for name, value, formula, _ in bc.report()[:8]:
            print(f"  {name:12s} {value:12.6g}   {formula}")
        rows, info = theorem4_rates(bc, args.q, args.p, n_tau=5)
        print(f"  branch {info['branch']}, tau in ({info['tau_min']:.4g}, {info['tau_max']:.4g})")
        print(f"  {'tau':>8s} {'Phi exp':>8s} {'Psi exp':>8s}")
        for r in rows:
            print(f"  {r.tau:8.4f} {r.phi_exponent:8.4f} {r.psi_exponent:8.4f}")


if __name__ == "__main__":
    main()
