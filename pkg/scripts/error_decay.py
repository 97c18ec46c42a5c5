#!/usr/bin/env python3
"""Quadrature error decay across region counts, written as plot-ready CSV.

Builds equal-measure partitions for each requested N, integrates the
Lipschitz test suite, and reports per-function errors, the Riemann bound,
and the fitted log-log decay slopes.
"""

import argparse
from pathlib import Path

from eqpart.quadrature import (
    error_decay_experiment,
    error_slopes,
    lipschitz_suite,
    rows_to_csv,
)
from eqpart.spaces import build_space


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--space", default="square",
                    choices=["interval", "square", "sphere", "gasket", "plus"])
    ap.add_argument("--atoms", type=int, default=65536,
                    help="atom count (side length for the square)")
    ap.add_argument("--level", type=int, default=9)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--delta", type=float, default=1.0 / 3.0)
    ap.add_argument("--Ns", type=str, default="16,32,64")
    ap.add_argument("--out", type=Path, default=Path("out/error_decay.csv"))
    args = ap.parse_args()

    space = build_space(args.space, atoms=args.atoms, level=args.level, seed=args.seed)
    Ns = [int(v) for v in args.Ns.split(",")]
    rows = error_decay_experiment(space, lipschitz_suite(space), Ns, delta=args.delta)

    print("space,N,f_name,error,bound,mesh,separation,ratio")
    for r in rows:
        print(f"{r.space},{r.N},{r.f_name},{r.error:.4e},{r.bound:.4e},"
              f"{r.mesh:.4g},{r.separation:.4g},{r.ratio:.4g}")
    for name, slope in error_slopes(rows).items():
        print(f"# slope[{name}] = {slope:.3f}  (ideal -1/d = {-1.0 / space.d_hint:.3f})")

    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(rows_to_csv(rows))
    print(f"# wrote {args.out}")


if __name__ == "__main__":
    main()
