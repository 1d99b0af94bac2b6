"""Coded BER of SVD, CBD and GP-CBD with a K=7 convolutional code on correlated 8x8 channels.

    python3 scripts/ber_ordering.py --snr 18 19 20 21 22 --workers 4
"""

import argparse
from pathlib import Path

from mimo_lab.channel import ChannelModel
from mimo_lab.cli import atomic_write, plot_svg, rows_to_csv
from mimo_lab.fec import BerConfig, CodeSpec, ber_run


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="results")
    p.add_argument("--snr", type=float, nargs="+", default=[18, 19, 20, 21, 22])
    p.add_argument("--m", type=int, default=16)
    p.add_argument("--rate", choices=["1/2", "3/4"], default="1/2")
    p.add_argument("--max-frames", type=int, default=5000)
    p.add_argument("--min-errors", type=int, default=100)
    p.add_argument("--seed", type=int, default=17)
    p.add_argument("--workers", type=int, default=1)
    args = p.parse_args()

    cfg = BerConfig(ChannelModel.kronecker(8, 8, 0.95), ("svd", "cbd", "gpcbd"), args.m, tuple(args.snr),
                    CodeSpec(rate=args.rate), max_frames=args.max_frames, min_errors=args.min_errors,
                    seed=args.seed)
    rows = ber_run(cfg, workers=args.workers)
    out = Path(args.out)
    atomic_write(out / "ber_ordering.csv", rows_to_csv(rows, "ber").encode())
    atomic_write(out / "ber_ordering.svg", plot_svg(rows, "ber"))
    for r in rows:
        print(f"{r.scheme:7s} {r.snr_db:5.1f} dB  BER {r.ber:.3e}  ({r.bit_errors} errors, {r.frames} frames)")


if __name__ == "__main__":
    main()
