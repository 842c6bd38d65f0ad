#!/usr/bin/env python3
"""Sweep the ensemble size B through the greedy-nonoptimality boundary.

For each B, prints the exact marginal-cost gap between the unbalanced and
balanced terminal states, the critical perturbation size, and the exact
objective change at a representative epsilon.
"""

import argparse
from fractions import Fraction

from splitalloc.bellman import reproduce_counterexample


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--b-min", type=int, default=10)
    ap.add_argument("--b-max", type=int, default=25)
    ap.add_argument("--epsilon", default="1/400")
    args = ap.parse_args()

    eps = Fraction(args.epsilon)
    print(f"{'B':>3} {'gap':>12} {'eps_crit':>10} {'delta_J(eps)':>16} improves")
    for B in range(args.b_min, args.b_max + 1):
        rep = reproduce_counterexample(B, eps)
        crit = f"{float(rep.epsilon_critical):.5f}" if rep.epsilon_critical else "-"
        print(
            f"{B:>3} {str(rep.gamma_gap):>12} {crit:>10} "
            f"{float(rep.delta_j_direct):>16.3e} {rep.improves}"
        )


if __name__ == "__main__":
    main()
