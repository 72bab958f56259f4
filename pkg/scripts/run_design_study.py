#!/usr/bin/env python3
"""Scheduling-mechanism utility study at the default desk scale.

Reproduces the three-mechanism comparison on the synthetic 76-ward map:
100 replicates of 500 comparisons, fit for 500 iterations each. Expect a
few minutes of runtime; use --workers to parallelise.
"""

import argparse
from pathlib import Path

from cjengine.simulation import DesignStudyConfig, demo_graph, run_design_study, write_study_report


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--wards", type=int, default=76)
    parser.add_argument("--replicates", type=int, default=100)
    parser.add_argument("--comparisons", type=int, default=500)
    parser.add_argument("--iterations", type=int, default=500)
    parser.add_argument("--burn-in", type=int, default=50)
    parser.add_argument("--alpha", type=float, default=3.0)
    parser.add_argument("--seed", type=int, default=2022)
    parser.add_argument("--workers", type=int, default=4)
    parser.add_argument("--out-dir", type=Path, default=Path("design-study"))
    args = parser.parse_args()

    report = run_design_study(DesignStudyConfig(
        graph=demo_graph(args.wards),
        alpha=args.alpha,
        comparisons=args.comparisons,
        replicates=args.replicates,
        iterations=args.iterations,
        burn_in=args.burn_in,
        seed=args.seed,
        workers=args.workers,
    ))
    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_study_report(report, args.out_dir / "utilities.csv",
                       args.out_dir / "summary.csv")
    for mech in report.mechanisms:
        print(f"{mech:22s} mean {report.mean[mech]:.4f} "
              f"min {report.minimum[mech]:.4f} max {report.maximum[mech]:.4f}")
    pc = report.mean["principal_component"]
    print(f"PC vs uniform: {100 * (pc / report.mean['uniform'] - 1):+.1f}%")
    print(f"PC vs naive:   {100 * (pc / report.mean['naive_spatial'] - 1):+.1f}%")


if __name__ == "__main__":
    main()
