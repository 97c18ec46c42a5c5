"""Command line front end: build spaces, cell trees, partitions and
quadrature tables with reproducible seeds and file outputs.

Outputs are deterministic: the same configuration (including the seed)
produces byte-identical files.  The parsed configuration is embedded in
every output file for provenance.  The environment variable EQPART_OUTDIR,
when set, redirects all output paths into that directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

from . import quadrature as quad
from .cubes import build_cube_tree, tree_to_json, verify_cube_axioms
from .errors import EqpartError
from .partition import (
    equal_measure_partition,
    partition_labels_csv,
    partition_to_json,
    quasi_equal_partition,
    region_diameters,
    verify_partition,
)
from .spaces import build_space, default_regularity_probe, space_to_json

DEFAULT_DELTA = 0.25
PARTITION_DELTA = 1.0 / 3.0


@dataclass(frozen=True)
class RunConfig:
    mode: str
    space: str
    atoms: int
    level: int
    seed: int
    delta: float
    N: int | None = None
    quasi: bool = False
    Ns: tuple[int, ...] = ()
    out: str | None = None
    fmt: str = "json"
    kmax: int | None = None
    dump_space: str | None = None

    def header(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}


def _out_path(path: str) -> Path:
    override = os.environ.get("EQPART_OUTDIR")
    p = Path(path)
    if override:
        p = Path(override) / p.name
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _write_json(path: str, config: RunConfig, payload: dict) -> Path:
    doc = {"config": config.header(), **payload}
    p = _out_path(path)
    p.write_text(json.dumps(doc, indent=1) + "\n")
    return p


def _write_csv(path: str, config: RunConfig, body: str) -> Path:
    header = "# config: " + json.dumps(config.header()) + "\n"
    p = _out_path(path)
    p.write_text(header + body)
    return p


def _build(config: RunConfig):
    space = build_space(
        config.space, atoms=config.atoms, level=config.level, seed=config.seed
    )
    tree = build_cube_tree(space, config.delta, k_max=config.kmax)
    probe = default_regularity_probe(space, exponent=space.d_hint, full_range=True)
    return space, tree, probe


def _print_constants(space, tree, probe, params=None) -> None:
    print(f"space: {space.kind}  atoms: {space.atom_count}  diam: {space.diam:.6g}")
    print(
        f"constants: c1_hat={probe.c1_hat:.4g} c2_hat={probe.c2_hat:.4g} "
        f"d_fit={probe.d_fit:.4g} a0_hat={tree.a0_hat:.4g} a1_hat={tree.a1_hat:.4g}"
    )
    if params is not None:
        print(
            f"partition: n={params.n} m={params.m} M={params.M:.4g} "
            f"c3={params.c3:.4g} c4={params.c4:.4g}"
        )


def cmd_cubes(config: RunConfig) -> int:
    space, tree, probe = _build(config)
    if config.dump_space:
        p = _write_json(config.dump_space, config, {"space": space_to_json(space)})
        print(f"wrote {p}")
    _print_constants(space, tree, probe)
    print("generation  cells  scale")
    for k in tree.generations:
        print(f"{k:10d}  {tree.cube_count(k):5d}  {tree.scale(k):.6g}")
    report = verify_cube_axioms(tree)
    print(
        f"cell axioms: covers={report.covers} disjoint={report.disjoint} "
        f"nested={report.nested} inner={report.inner_ball} outer={report.outer_ball} "
        f"ratio={report.ratio:.3g}"
    )
    if config.out:
        p = _write_json(config.out, config, {"tree": tree_to_json(tree)})
        print(f"wrote {p}")
    return 0 if report.all_ok else 1


def cmd_partition(config: RunConfig) -> int:
    space, tree, probe = _build(config)
    N = config.N or 32
    if config.quasi:
        part = quasi_equal_partition(space, tree, N, probe)
    else:
        part = equal_measure_partition(space, tree, N, probe)
    report = verify_partition(space, part)
    _print_constants(space, tree, probe, part.params)
    diams = region_diameters(space, part)
    print(
        f"regions: {len(part.regions)}  max |mass - 1/N|: {report.max_measure_dev:.3g}  "
        f"mass spread: {report.measure_spread:.4g}"
    )
    print(
        f"max outer radius: {report.max_outer_radius:.4g} (bound {report.outer_bound:.4g})  "
        f"max diameter: {diams.max():.4g}"
    )
    print(
        f"checks: cover={report.covers} disjoint={report.disjoint} "
        f"outer={report.outer_ok} inner={report.inner_ball_ok} ledger={report.ledger_ok}"
    )
    if config.out:
        if config.fmt == "csv":
            p = _write_csv(config.out, config, partition_labels_csv(part))
        else:
            p = _write_json(config.out, config, {"partition": partition_to_json(part)})
        print(f"wrote {p}")
    return 0 if report.all_ok else 1


def cmd_quad(config: RunConfig) -> int:
    space, tree, probe = _build(config)
    suite = quad.lipschitz_suite(space)
    rows = quad.error_decay_experiment(
        space, suite, list(config.Ns), delta=config.delta, tree=tree, probe=probe,
        mode="quasi" if config.quasi else "equal",
    )
    _print_constants(space, tree, probe)
    print("space,N,f_name,error,bound,mesh,separation,ratio")
    for r in rows:
        print(
            f"{r.space},{r.N},{r.f_name},{r.error:.3e},{r.bound:.3e},"
            f"{r.mesh:.4g},{r.separation:.4g},{r.ratio:.4g}"
        )
    slopes = quad.error_slopes(rows)
    for name, slope in slopes.items():
        print(f"slope[{name}] = {slope:.3f}")
    if config.out:
        if config.fmt == "csv":
            p = _write_csv(config.out, config, quad.rows_to_csv(rows))
        else:
            payload = {"rows": [asdict(r) for r in rows], "slopes": slopes}
            p = _write_json(config.out, config, payload)
        print(f"wrote {p}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eqpart",
        description="equal-measure diameter-bounded partitions on weighted point clouds",
    )
    sub = parser.add_subparsers(dest="mode", required=True)

    def add_common(p, default_delta):
        p.add_argument(
            "--space",
            choices=["interval", "square", "sphere", "gasket", "plus"],
            default="interval",
        )
        p.add_argument("--atoms", type=int, default=4096,
                       help="atom count (side length for the square)")
        p.add_argument("--level", type=int, default=7, help="gasket subdivision level")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--delta", type=float, default=default_delta)
        p.add_argument("--kmax", type=int, default=None, help="finest tree generation")
        p.add_argument("--out", type=str, default=None)
        p.add_argument("--format", dest="fmt", choices=["json", "csv"], default="json")

    p_cubes = sub.add_parser("cubes", help="build a cell tree and verify its axioms")
    add_common(p_cubes, DEFAULT_DELTA)
    p_cubes.add_argument("--dump-space", type=str, default=None,
                         help="also write the atom cloud as JSON")

    p_part = sub.add_parser("partition", help="build an equal-measure partition")
    add_common(p_part, PARTITION_DELTA)
    p_part.add_argument("--N", type=int, default=32)
    p_part.add_argument("--quasi", action="store_true",
                        help="comparable-mass regions (no connectivity needed)")

    p_quad = sub.add_parser("quad", help="quadrature error-decay table")
    add_common(p_quad, PARTITION_DELTA)
    p_quad.add_argument("--Ns", type=str, default="16,32,64")
    p_quad.add_argument("--quasi", action="store_true")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    Ns: tuple[int, ...] = ()
    if getattr(args, "Ns", None):
        Ns = tuple(int(v) for v in str(args.Ns).split(",") if v)
    return RunConfig(
        mode=args.mode,
        space=args.space,
        atoms=args.atoms,
        level=args.level,
        seed=args.seed,
        delta=args.delta,
        N=getattr(args, "N", None),
        quasi=bool(getattr(args, "quasi", False)),
        Ns=Ns,
        out=args.out,
        fmt=args.fmt,
        kmax=args.kmax,
        dump_space=getattr(args, "dump_space", None),
    )


def main(argv: list[str] | None = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    config = config_from_args(args)
    handlers = {"cubes": cmd_cubes, "partition": cmd_partition, "quad": cmd_quad}
    try:
        return handlers[config.mode](config)
    except EqpartError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
