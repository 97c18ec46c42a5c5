#!/usr/bin/env python3
"""Print the measured constants for every built-in space.

For each builder this reports the fitted ball-growth constants (c1, c2,
d_fit), the realized inner/outer cell constants (a0, a1), and the derived
partition constants (M, c3, c4) at a representative region count.
"""

import argparse

from eqpart.cubes import build_cube_tree
from eqpart.partition import equal_measure_partition
from eqpart.spaces import (
    build_gasket,
    build_interval,
    build_plus_sign,
    build_sphere_s2,
    build_square,
    default_regularity_probe,
)

SPACES = {
    "interval": lambda: build_interval(2**16),
    "square": lambda: build_square(256),
    "sphere": lambda: build_sphere_s2(65536, seed=0),
    "gasket": lambda: build_gasket(9),
    "plus": lambda: build_plus_sign(2**16),
}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--delta", type=float, default=1.0 / 3.0)
    ap.add_argument("--N", type=int, default=16)
    args = ap.parse_args()

    print(f"delta={args.delta:.4f}  N={args.N}")
    header = f"{'space':9s} {'d':>6s} {'c1':>7s} {'c2':>7s} {'a0':>6s} {'a1':>6s} {'M':>8s} {'c3':>8s} {'c4':>9s}"
    print(header)
    print("-" * len(header))
    for name, make in SPACES.items():
        space = make()
        tree = build_cube_tree(space, args.delta)
        probe = default_regularity_probe(space, exponent=space.d_hint, full_range=True)
        try:
            part = equal_measure_partition(space, tree, args.N, probe)
            p = part.params
            tail = f"{p.M:8.1f} {p.c3:8.2f} {p.c4:9.5f}"
        except Exception as exc:
            tail = f"({type(exc).__name__})"
        print(
            f"{name:9s} {space.d_hint:6.3f} {probe.c1_hat:7.3f} {probe.c2_hat:7.3f} "
            f"{tree.a0_hat:6.3f} {tree.a1_hat:6.3f} {tail}"
        )


if __name__ == "__main__":
    main()
