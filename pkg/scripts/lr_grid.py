"""Reproduce the learning-rate selection: mean final/first epoch-loss ratio over seeds 0-2."""

import argparse
import sys

import numpy as np

from tmrl.benchmark import run_benchmark


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--lrs", type=float, nargs="+", default=[5e-4, 7e-4, 1e-3, 3e-3, 1e-2])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = ap.parse_args(argv)
    print("lr," + ",".join(f"seed{s}" for s in args.seeds) + ",mean")
    best = None
    for lr in args.lrs:
        ratios = [run_benchmark(seed=s, lr=lr).loss_ratio for s in args.seeds]
        mean = float(np.mean(ratios))
        print(f"{lr:g}," + ",".join(f"{r:.4f}" for r in ratios) + f",{mean:.4f}", flush=True)
        if best is None or mean < best[1]:
            best = (lr, mean)
    print(f"selected lr={best[0]:g} (mean ratio {best[1]:.4f})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
