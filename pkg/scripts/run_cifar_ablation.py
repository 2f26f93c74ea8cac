#!/usr/bin/env python3
"""Full desk-scale init-method ablation: micro model on CIFAR-10.

Defaults follow the pinned protocol: 10 epochs, 5 seeds per arm, SGD with
momentum 0.9, batch 64, one warmup epoch to peak rate 0.1 then cosine, basic
augmentation, label smoothing 0.1, no weight decay, no gradient clipping.
Expect on the order of two hours of CPU time for all ten runs.

The data directory must hold the canonical binary files data_batch_1..5.bin
and test_batch.bin.
"""

import argparse
import sys

from neonext.trainer import RunConfig, run_ablation


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data-dir", required=True)
    ap.add_argument("--out", default="runs/cifar_ablation")
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--seeds", default="1,2,3,4,5")
    ap.add_argument("--lr", type=float, default=0.1)
    args = ap.parse_args()
    from neonext.trainer import OptimSpec

    cfg = RunConfig(
        data="cifar10",
        data_dir=args.data_dir,
        out_dir=args.out,
        epochs=args.epochs,
        seeds=tuple(int(s) for s in args.seeds.split(",")),
        optimizer=OptimSpec(lr=args.lr),
    )
    report = run_ablation(cfg)
    print(report.summary_text(), end="")
    print(f"report: {report.report_path}")
    neo = report.arms["neoinit"]
    rand = report.arms["random-normal"]
    direction_holds = neo.mean_acc > rand.mean_acc and neo.diverged == 0
    print(f"direction holds: {direction_holds}")
    return 0 if direction_holds else 1


if __name__ == "__main__":
    sys.exit(main())
