#!/usr/bin/env python3
"""Bit-match thresholds under the fair-coin null model."""
import argparse

from gsedict.stats import QUOTED_DETECT_FRACTION, QUOTED_TRACE_FRACTION, threshold_bits


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--bits", type=int, nargs="+", default=[16, 64, 256, 512])
    ap.add_argument("--fpr", type=float, nargs="+", default=[1e-3, 1e-6, 1e-9])
    ap.add_argument("--users", type=int, default=1000, help="database size for the trace row")
    args = ap.parse_args()

    print(f"{'n':>5} {'fpr':>8} {'k':>5} {'k/n':>7}")
    for n in args.bits:
        for fpr in args.fpr:
            k = threshold_bits(n, fpr)
            print(f"{n:>5} {fpr:>8.0e} {k:>5} {k / n:>7.4f}")

    kd = threshold_bits(256, 1e-6)
    kt = threshold_bits(256, 1e-6 / args.users)
    print(f"\n256 bits, fpr 1e-6: detect {kd / 256:.4f} (quoted {QUOTED_DETECT_FRACTION})")
    print(f"256 bits, fpr 1e-6 over {args.users} users: trace {kt / 256:.4f} "
          f"(quoted {QUOTED_TRACE_FRACTION})")


if __name__ == "__main__":
    main()
