"""Run every acceptance criterion and print one pass/fail line each.

    python scripts/run_acceptance.py [--only 1,2,3] [--workers N]
"""
import argparse
import sys

from kinsplit.harness import run_acceptance


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--only", type=lambda s: [int(x) for x in s.split(",")])
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    results = run_acceptance(workers=args.workers, only=args.only)
    print(f"{sum(r.passed for r in results)}/{len(results)} criteria pass")
    return 0 if all(r.passed for r in results) else 1


if __name__ == "__main__":
    sys.exit(main())
