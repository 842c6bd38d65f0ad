#!/usr/bin/env python3
"""Run the (gamma, w) honest-forest sweep in both SNR regimes.

Writes one CSV per regime (heatmap_high_snr.csv, heatmap_low_snr.csv) with
the gamma,w,snr,rep_count,mean_mse,se schema.  The defaults use a
desk-scale configuration; pass --full for the d=100 setup (slow).
"""

import argparse
import csv
import math

import numpy as np

from splitalloc.environment import ModelConfig
from splitalloc.forest import ExperimentGrid, ForestParams, HEATMAP_COLUMNS, heatmap_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--full", action="store_true", help="d=100, n0=500, B=200 (hours)")
    ap.add_argument("--reps", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--outdir", default=".")
    args = ap.parse_args()

    if args.full:
        d, s, params = 100, 5, ForestParams(n0=500, ell=5, min_leaf=5, B=200, n_test=100)
    else:
        d, s, params = 40, 5, ForestParams(n0=300, ell=5, min_leaf=5, B=100, n_test=100)
    beta = (1.0,) * s
    grid = ExperimentGrid(reps=args.reps)

    for label, snr in (("high", 2.0), ("low", 0.5)):
        sigma0 = float(np.linalg.norm(beta)) / snr
        model = ModelConfig(d=d, s=s, m=d, beta=beta, sigma0_sq=sigma0**2)
        rows = heatmap_experiment(grid, model, params, seed=args.seed)
        path = f"{args.outdir}/heatmap_{label}_snr.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(HEATMAP_COLUMNS)
            for r in rows:
                writer.writerow([r[c] for c in HEATMAP_COLUMNS])
        print(f"wrote {path} ({len(rows)} cells, snr={snr})")


if __name__ == "__main__":
    main()
