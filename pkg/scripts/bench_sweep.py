#!/usr/bin/env python3
"""Multiply-count and wall-clock sweep over kernel sizes.

Appends one CSV row per (op, k) to the output file and prints the exact
multiply ratio alongside the measured timings.  Timings are informational;
only the ratios are machine-independent.
"""

import argparse
import sys
from fractions import Fraction

from neonext.bench import append_bench_csv, bench, flops_dwconv, flops_neocell


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--c", type=int, default=96)
    ap.add_argument("--size", type=int, default=56, help="square spatial size; must divide by every k")
    ap.add_argument("--ks", default="4,7")
    ap.add_argument("--iters", type=int, default=10)
    ap.add_argument("--warmup", type=int, default=2)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", default="runs/bench_sweep.csv")
    args = ap.parse_args()
    ks = [int(k) for k in args.ks.split(",")]
    for k in ks:
        if args.size % k:
            print(f"skip k={k}: {args.size} not divisible", file=sys.stderr)
            continue
        neo = bench("neocell", args.c, args.size, args.size, k,
                    iters=args.iters, warmup=args.warmup, threads=args.threads)
        blk = bench("blockdiag", args.c, args.size, args.size, k,
                    iters=args.iters, warmup=args.warmup, threads=args.threads)
        rows = [neo, blk]
        if k % 2:
            rows.append(bench("dwconv", args.c, args.size, args.size, k,
                              iters=args.iters, warmup=args.warmup, threads=args.threads))
        for r in rows:
            append_bench_csv(args.out, r)
        ratio = Fraction(
            flops_neocell(args.c, args.size, args.size, k).multiplies,
            flops_dwconv(args.c, args.size, args.size, k).multiplies,
        )
        line = f"k={k}: multiply ratio {ratio} ; patchwise median {neo.t_median * 1e3:.2f} ms ; blockdiag median {blk.t_median * 1e3:.2f} ms"
        if k % 2:
            line += f" ; dwconv median {rows[-1].t_median * 1e3:.2f} ms"
        print(line)
    print(f"rows appended to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
