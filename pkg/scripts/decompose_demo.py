"""Show how GP-CBD pairs eigen-subchannels as the SNR grows, for one fixed channel.

    python3 scripts/decompose_demo.py --seed 3
"""

import argparse

from mimo_lab.channel import ChannelModel, draw
from mimo_lab.cli import decompose_report


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=3)
    p.add_argument("--m", type=int, default=16)
    args = p.parse_args()

    h = draw(ChannelModel.kronecker(4, 4, 0.9), args.seed).h
    for snr in (-10, 0, 10, 20, 30):
        print(decompose_report(h, "gpcbd", snr, args.m))


if __name__ == "__main__":
    main()
