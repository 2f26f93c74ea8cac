#!/usr/bin/env python3
"""CI-scale init-method ablation on the synthetic task.

Both arms (identity-style init vs random normal) train the micro model for a
few epochs over several seeds under identical settings; the report carries
mean/std accuracy, divergence counts, and the accuracy gap.
"""

import argparse
import sys

from neonext.trainer import RunConfig, run_ablation


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/synth_ablation")
    ap.add_argument("--epochs", type=int, default=3)
    ap.add_argument("--seeds", default="1,2,3,4,5")
    ap.add_argument("--train-size", type=int, default=1280)
    ap.add_argument("--val-size", type=int, default=320)
    args = ap.parse_args()
    cfg = RunConfig(
        out_dir=args.out,
        epochs=args.epochs,
        seeds=tuple(int(s) for s in args.seeds.split(",")),
        synth_train=args.train_size,
        synth_val=args.val_size,
    )
    report = run_ablation(cfg)
    print(report.summary_text(), end="")
    print(f"report: {report.report_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
