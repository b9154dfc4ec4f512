#!/usr/bin/env python3
"""Tester calibration curve: p-value versus tested epsilon.

Runs the statistical tester on a fixed completion of a benchmark across a
sweep of test epsilons and prints one CSV row per epsilon.  For a mechanism
that is exactly eps0-DP the curve should cross from near 0 (violation
detected below eps0) to near 1 (clearly private above eps0).

Usage:
    python scripts/calibration_curve.py [--sketch noisymax1] [--noise 4.0]
                                        [--eps-grid 0.1:1.0:0.1] [--trials 100000]
"""

import argparse

from mechsynth import decision_p, test_mechanism
from mechsynth.cli import load_sketch


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sketch", default="noisymax1")
    ap.add_argument("--noise", default="4.0",
                    help="comma-separated scale per hole; 'bot' = no noise")
    ap.add_argument("--eps-grid", default="0.1:1.0:0.1")
    ap.add_argument("--trials", type=int, default=100000)
    ap.add_argument("--qlen", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    sketch = load_sketch(args.sketch)
    vec = [None if p.strip() in ("bot", "none", "_") else float(p)
           for p in args.noise.split(",")]
    lo, hi, step = (float(x) for x in args.eps_grid.split(":"))
    print("test_epsilon,min_p,decision_p")
    eps = lo
    while eps <= hi + 1e-9:
        best, cands = test_mechanism(
            sketch, {}, vec, eps, trials=args.trials, seed=args.seed,
            qlen=args.qlen, return_all=True)
        min_p = 1.0 if best is None else best.p_value
        print(f"{eps:.3f},{min_p:.6g},{decision_p(cands):.6g}", flush=True)
        eps += step


if __name__ == "__main__":
    main()
