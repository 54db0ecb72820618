#!/usr/bin/env python3
"""Closed-form parameter census of the four variants, independent of the C++ graph."""

import argparse

VARIANTS = {
    "plain": (False, False),
    "dilation": (True, False),
    "residual": (False, True),
    "proposed": (True, True),
}


def conv(cin, cout, k):
    return cin * cout * k * k + cout


def census(variant, channels=(5, 13, 89, 233), in_channels=3):
    pyramid, skips = VARIANTS[variant]
    c1, c2, c3, c4 = channels
    branches = 3 if pyramid else 1
    l1_out = branches * c1
    return [
        branches * (conv(in_channels, c1, 3) + 2 * c1),
        conv(l1_out, c2, 3) + 2 * c2,
        conv(c2, c3, 3) + 2 * c3,
        conv(c3, c4, 3) + 2 * c4,
        conv(c4 + (c3 if skips else 0), c3, 3),
        conv(c3 + (c2 if skips else 0), c2, 3),
        conv(c2 + (l1_out if skips else 0), c1, 3),
        conv(c1, c1, 1),
        conv(c1, 1, 1),
    ]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--variant", choices=sorted(VARIANTS), default="proposed")
    args = parser.parse_args()
    layers = census(args.variant)
    for i, n in enumerate(layers, start=1):
        print(f"layer{i} {n}")
    print(f"total {sum(layers)}")


if __name__ == "__main__":
    main()
