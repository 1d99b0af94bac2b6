"""Empirical ECCN distribution of the four transceivers at a few SNR points.

    python3 scripts/eccn_cdf.py --trials 1000
"""

import argparse

import numpy as np

from mimo_lab.channel import ChannelModel, draw
from mimo_lab.detect import build_constellation
from mimo_lab.schemes import NoiseModel, design


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--m", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    model = ChannelModel.rayleigh(8, 8)
    c = build_constellation(args.m)
    for snr in (0.0, 10.0, 20.0, 30.0):
        noise = NoiseModel.from_snr_db(snr)
        print(f"SNR {snr:g} dB")
        for scheme in ("svd", "cbd", "gmd", "gpcbd"):
            vals = np.array([design(scheme, draw(model, args.seed, 0, t).h, noise, c).eccn
                             for t in range(args.trials)])
            q = np.percentile(vals, [10, 50, 90])
            print(f"  {scheme:6s} mean {vals.mean():9.2f}  p10 {q[0]:8.2f}  p50 {q[1]:8.2f}  p90 {q[2]:8.2f}")


if __name__ == "__main__":
    main()
