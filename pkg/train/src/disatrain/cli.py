"""Command line: corpus generation and training.

    disatrain corpus --out-dir corpus/ --seeds 100-105
    disatrain train --corpus corpus/ --weights net.dsw --report report.txt
"""
from __future__ import annotations

import argparse
import os
import sys

from .corpus import generate_cases, load_pairs
from .model import export_weights
from .sampling import TrainConfig, sample_patches
from .training import TrainingDiverged, train


def _parse_seeds(text):
    if "-" in text:
        lo, hi = text.split("-", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(v) for v in text.split(",")]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="disatrain")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("corpus", help="generate synthetic training cases")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seeds", default="100-105", help="range 'a-b' or list 'a,b,c'")
    p.add_argument("--dims", default="64,64,64")
    p.add_argument("--spacing", type=float, default=10.4)

    p = sub.add_parser("train", help="train and export weights")
    p.add_argument("--corpus", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--report")
    p.add_argument("--samples-per-pair", type=int, default=10000)
    p.add_argument("--patch-size", type=int, default=32)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--learning-rate", type=float, default=3e-3)
    p.add_argument("--seed", type=int, default=0)

    args = parser.parse_args(argv)
    if args.command == "corpus":
        cases = generate_cases(args.out_dir, _parse_seeds(args.seeds),
                               dims=args.dims, spacing=args.spacing)
        print(f"{len(cases)} cases in {args.out_dir}")
        return 0

    cases = sorted(os.path.join(args.corpus, d) for d in os.listdir(args.corpus)
                   if d.startswith("case_"))
    if not cases:
        print(f"no case_* directories under {args.corpus}", file=sys.stderr)
        return 2
    pairs = load_pairs(cases)
    cfg = TrainConfig(samples_per_pair=args.samples_per_pair,
                      patch_size=args.patch_size, epochs=args.epochs,
                      learning_rate=args.learning_rate, seed=args.seed)
    patches = sample_patches(pairs, cfg)
    print(f"{len(patches)} samples from {len(pairs)} image pairs")
    try:
        net, report = train(patches, cfg)
    except TrainingDiverged as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return 5
    export_weights(net, args.weights)
    print(f"weights written to {args.weights}; "
          f"final train/val L2: {report.train_l2[-1]:.4f}/{report.val_l2[-1]:.4f}")
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write("\n".join(report.lines()) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
