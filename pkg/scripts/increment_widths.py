"""Within-cell increments against cell widths along an epsilon ladder.

The within-cell increment of v scales like the square root of the widest
cell.  When crossings rather than the epsilon cap end the cells, the widest
cell is not proportional to epsilon, and the fitted exponent in epsilon
moves away from 1/2 while the exponent in the width stays near it.

    python scripts/increment_widths.py --problem burgers-noise --samples 64
"""
import argparse

import numpy as np

from kinsplit.harness import ExperimentPlan, RunCache, increment_study


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--problem", default="burgers-noise")
    ap.add_argument("--ladder", default="0.2,0.1,0.05,0.025")
    ap.add_argument("--samples", type=int, default=64)
    args = ap.parse_args()
    ladder = tuple(float(x) for x in args.ladder.split(","))
    plan = ExperimentPlan(problem=args.problem, ladder=ladder, samples=args.samples,
                          fine=min(ladder) / 64)
    cache = RunCache()
    study = increment_study(plan, cache)
    print(f"{'eps':>7} {'cells':>6} {'max width':>10} {'width/eps':>9} {'crossings':>9} "
          f"{'v incr':>10} {'incr/sqrt(w)':>12}")
    widths, incr = [], []
    for r in study["rows"]:
        part, _, _ = cache.get(plan, r["epsilon"])
        cross = sum(e == "crossing" for e in part.ended_by)
        w = r["max_width"]
        widths.append(w)
        incr.append(r["v_pair_max"])
        print(f"{r['epsilon']:>7.4g} {r['cells']:>6d} {w:>10.4g} {w / r['epsilon']:>9.3f} "
              f"{cross:>9d} {r['v_pair_max']:>10.4g} {r['v_pair_max'] / np.sqrt(w):>12.4g}")
    print(f"exponent in epsilon {study['v_order']:.3f}, "
          f"in max width {np.polyfit(np.log(widths), np.log(incr), 1)[0]:.3f}")


if __name__ == "__main__":
    main()
