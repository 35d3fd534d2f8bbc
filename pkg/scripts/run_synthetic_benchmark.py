"""Train on the seeded twin-year benchmark and report loss, nDCG and alignment changes.

    python scripts/run_synthetic_benchmark.py --seed 0 --outdir runs/bench
"""

import argparse
import sys

from tmrl.benchmark import MAX_LOSS_RATIO, MIN_ALIGN_GAIN, MIN_NDCG_GAIN, run_benchmark


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--passages", type=int, default=200)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--lr", type=float, default=None)
    ap.add_argument("--outdir", default=None, help="write checkpoints and loss_curve.csv here")
    args = ap.parse_args(argv)

    overrides = {"epochs": args.epochs}
    if args.lr is not None:
        overrides["lr"] = args.lr
    res = run_benchmark(seed=args.seed, n_passages=args.passages, d=args.dim, outdir=args.outdir, **overrides)
    print(res.summary())
    m0 = min(res.cfg.loss.M)
    verdicts = [
        ("loss ratio", res.loss_ratio <= MAX_LOSS_RATIO),
        ("nDCG gain", res.ndcg(m0) - res.ndcg(m0, after=False) >= MIN_NDCG_GAIN),
        ("alignment gain", res.align_after - res.align_before >= MIN_ALIGN_GAIN),
    ]
    print()
    for name, ok in verdicts:
        print(f"{name}: {'PASS' if ok else 'FAIL'}")
    return 0 if all(ok for _, ok in verdicts) else 1


if __name__ == "__main__":
    sys.exit(main())
