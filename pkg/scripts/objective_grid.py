#!/usr/bin/env python3
"""Objective-landscape grid for a two-hole sketch (or two chosen holes).

Thin wrapper over the ``grid`` CLI command that also runs the evolutionary
search and appends its best vector as a comment line, so the landscape and
the optimizer's answer land in one artifact.

Usage:
    python scripts/objective_grid.py [--sketch abovet1] [--grid 1:12]
                                     [--out grid.csv] [--seed 0]
"""

import argparse
import sys

from mechsynth import RunConfig, get_noise_region, select_examples
from mechsynth.cli import load_sketch
from mechsynth.search import PresampleBank, batch_objective
from mechsynth.synth import fix_params, render_vector


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sketch", default="abovet1")
    ap.add_argument("--holes", default="1,2")
    ap.add_argument("--grid", default="1:12")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--trials", type=int, default=20000)
    ap.add_argument("--presamples", type=int, default=50000)
    ap.add_argument("--out", default="")
    args = ap.parse_args()

    sketch = load_sketch(args.sketch)
    i, j = (int(h) for h in args.holes.split(","))
    cfg = RunConfig(seed=args.seed, trials=args.trials,
                    presamples=args.presamples)
    binding = fix_params(sketch, cfg)
    examples = select_examples(
        sketch, binding, scale_grid=cfg.scale_grid, trials=cfg.trials,
        seed=cfg.seed, zone=cfg.zone)
    if not examples:
        sys.exit("no challenging examples found")
    bank = PresampleBank(sketch, binding, qlen=cfg.qlen, m=cfg.presamples,
                         proposal_scale=cfg.proposal_scale, seed=cfg.seed)

    parts = args.grid.split(":")
    lo, hi = float(parts[0]), float(parts[1])
    step = float(parts[2]) if len(parts) == 3 else 1.0
    axis = []
    v = lo
    while v <= hi + 1e-9:
        axis.append(v)
        v += step
    points = [(a, b) for a in axis for b in axis]
    cands = []
    for a, b in points:
        vec = [None] * sketch.n_holes
        vec[i - 1], vec[j - 1] = a, b
        cands.append(vec)
    objs = batch_objective(bank, examples, cands, float(cfg.epsilon), cfg.lam)

    region = get_noise_region(
        bank, examples, sketch.n_holes, float(cfg.epsilon), lam=cfg.lam,
        population=cfg.population, steps=cfg.steps(sketch.n_holes),
        seed=cfg.seed)
    best_vec, best_obj = region.entries[0]

    lines = [f"scale{i},scale{j},objective"]
    lines += [f"{a:g},{b:g},{o:.6f}" for (a, b), o in zip(points, objs)]
    lines.append(f"# optimizer best: {render_vector(best_vec)} "
                 f"objective {best_obj:.6f}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


if __name__ == "__main__":
    main()
