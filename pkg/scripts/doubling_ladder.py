"""Doubling functional along a joint (eta, eps) ladder with delta = eta^theta.

    python scripts/doubling_ladder.py --problem burgers-noise --samples 64
"""
import argparse

from kinsplit.harness import ExperimentPlan, RunCache, doubling_study


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--problem", default="burgers-noise")
    ap.add_argument("--ladder", default="0.2,0.1,0.05")
    ap.add_argument("--etas", default="0.2,0.1,0.05")
    ap.add_argument("--theta", type=float, default=1.5)
    ap.add_argument("--gamma", type=float, default=0.75)
    ap.add_argument("--samples", type=int, default=64)
    args = ap.parse_args()
    plan = ExperimentPlan(problem=args.problem, samples=args.samples,
                          ladder=tuple(float(x) for x in args.ladder.split(",")))
    res = doubling_study(plan, etas=tuple(float(x) for x in args.etas.split(",")),
                         theta=args.theta, gamma=args.gamma, cache=RunCache())
    table = res["table"]
    print(f"t = {res['time']:.3g}")
    print(f"{'eta':>6} {'eps':>6} {'value':>10} {'se':>9} {'min sample':>10} {'theory':>8}")
    for r in table.rows:
        print(f"{r['eta']:>6.3g} {r['epsilon']:>6.3g} {r['pair_value']:>10.4g} "
              f"{r['pair_value_se']:>9.2g} {r['min_sample_pair_value']:>10.3g} {r['theory']:>8.3g}")
    print(f"fitted slope {table.slope:.3f}, envelope exponent {table.theory_exponent:.3f}")


if __name__ == "__main__":
    main()
