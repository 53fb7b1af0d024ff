"""Effective conductivity of a square array of circular holes.

Prints e* = E*_11 for E = I against hole radius and cell resolution, next
to the porosity and the dilute estimate (1 - f)/(1 + f).
"""
from __future__ import annotations

import argparse

import numpy as np

from pphom.cell import solve_W
from pphom.effective import compute_Estar
from pphom.mesh import CellSpec, build_cell_mesh


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--radii", type=float, nargs="+", default=[0.1, 0.2, 0.25, 0.3, 0.35])
    ap.add_argument("--resolutions", type=int, nargs="+", default=[16, 32, 64])
    args = ap.parse_args()

    head = f"{'r':>6s} {'porosity':>9s} " + " ".join(f"{'n_c=' + str(n):>10s}" for n in args.resolutions)
    print(head + f" {'dilute':>9s} {'gram gap':>9s}")
    for r in args.radii:
        vals, gap = [], 0.0
        for n in args.resolutions:
            mesh = build_cell_mesh(CellSpec("disk", (0.5, 0.5), r, n))
            es = compute_Estar(mesh, np.eye(2), solve_W(mesh, np.eye(2)))
            vals.append(es.value[0, 0])
            gap = max(gap, es.discrepancy)
        f = np.pi * r * r
        print(f"{r:6.3f} {1 - f:9.5f} " + " ".join(f"{v:10.6f}" for v in vals) + f" {(1 - f) / (1 + f):9.5f} {gap:9.1e}")


if __name__ == "__main__":
    main()
