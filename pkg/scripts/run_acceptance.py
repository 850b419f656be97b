"""Run every acceptance gate outside pytest and print one PASS/FAIL line each."""
import argparse
import sys

from dansf.verify import run_all


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--runs", type=int, default=20)
    args = ap.parse_args()
    results = run_all(runs=args.runs, monotone_runs=min(args.runs, 10), jobs=args.jobs)
    for r in results:
        print(r.line(), flush=True)
    return 0 if all(r.passed for r in results) else 1


if __name__ == "__main__":
    sys.exit(main())
