"""Run simulate -> extract -> featurize -> train/evaluate (every model) -> report.

    python3 scripts/run_pipeline.py --out runs --seed 22
"""

import argparse
import sys
import time

from flowsentry import cli


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--scenario", default=None)
    ap.add_argument("--models", default=",".join(cli.MODEL_KINDS))
    args = ap.parse_args()

    common = ["--out", args.out]
    if args.seed is not None:
        common += ["--seed", str(args.seed)]
    if args.scenario:
        common += ["--scenario", args.scenario]

    steps = [["simulate"], ["extract"], ["featurize"]]
    for kind in args.models.split(","):
        steps += [["train", "--model", kind], ["evaluate", "--model", kind]]
    steps.append(["report"])

    t0 = time.perf_counter()
    for step in steps:
        if cli.main(step + common) != 0:
            sys.exit(f"step {' '.join(step)} failed")
    print(f"done in {time.perf_counter() - t0:.1f}s", file=sys.stderr)


if __name__ == "__main__":
    main()
