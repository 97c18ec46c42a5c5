"""Quadrature rules built from partitions.

A rule places one node at each region's inner-ball center and weights it
with the region mass; for equal-measure partitions all weights are 1/N.
The mesh/separation ratio of the node set is bounded by c3/c4, and for any
Lipschitz integrand the rule's error against the atom-sum integral is at
most Lip(f) times the largest region diameter (one Riemann-sum triangle
inequality per region).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .cubes import CubeTree, build_cube_tree
from .partition import (
    Partition,
    equal_measure_partition,
    quasi_equal_partition,
    region_diameters,
)
from .spaces import AtomizedSpace, RegularityReport, default_regularity_probe


@dataclass(eq=False)
class QuadratureRule:
    space: AtomizedSpace
    node_ids: np.ndarray
    weights: np.ndarray
    mesh: float
    separation: float

    @property
    def node_positions(self) -> np.ndarray:
        return self.space.positions[self.node_ids]

    def __len__(self) -> int:
        return len(self.node_ids)


def rule_from_partition(space: AtomizedSpace, partition: Partition) -> QuadratureRule:
    """Nodes at the inner-ball centers, weights equal to region masses."""
    nodes = np.asarray([r.inner_center for r in partition.regions], dtype=np.int64)
    weights = np.asarray([r.measure for r in partition.regions])
    npos = space.positions[nodes]
    mesh = 0.0
    chunk = max(1, 2**22 // max(1, len(nodes)))
    for lo in range(0, space.atom_count, chunk):
        d = space.metric.pairwise(space.positions[lo : lo + chunk], npos)
        mesh = max(mesh, float(d.min(axis=1).max()))
    if len(nodes) > 1:
        dn = space.metric.pairwise(npos, npos)
        np.fill_diagonal(dn, np.inf)
        separation = float(dn.min())
    else:
        separation = math.inf
    return QuadratureRule(
        space=space, node_ids=nodes, weights=weights, mesh=mesh, separation=separation
    )


def integrate(rule: QuadratureRule, f: Callable[[np.ndarray], np.ndarray]) -> float:
    """Sum of w_j * f(node_j); f maps an (n, dim) position array to values."""
    vals = np.asarray(f(rule.node_positions), dtype=np.float64)
    return float(np.sum(rule.weights * vals))


def atom_integral(space: AtomizedSpace, f: Callable[[np.ndarray], np.ndarray]) -> float:
    """Reference integral: the atomized measure is the measure."""
    vals = np.asarray(f(space.positions), dtype=np.float64)
    return float(np.sum(space.weights * vals))


# ---------------------------------------------------------------------------
# Lipschitz test functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TestFunction:
    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    lipschitz: float


def lipschitz_suite(space: AtomizedSpace) -> list[TestFunction]:
    """Coordinate maps, a distance-to-point map, and a smooth bump.

    All are 1-Lipschitz for the space metric except the bump, whose constant
    is the calculus bound sqrt(2/e)/s for scale s.
    """
    dim = space.positions.shape[1]
    suite = [
        TestFunction(f"coord{i}", (lambda i=i: (lambda P: P[:, i]))(), 1.0)
        for i in range(dim)
    ]
    p0 = space.positions[space.atom_count // 3].copy()
    metric = space.metric

    def dist_to(P, p0=p0):
        return metric.pairwise(p0[None, :], P)[0]

    suite.append(TestFunction("dist_to_point", dist_to, 1.0))
    s = space.diam / 4.0

    def bump(P, p0=p0, s=s):
        r = metric.pairwise(p0[None, :], P)[0]
        return np.exp(-((r / s) ** 2))

    suite.append(TestFunction("bump", bump, math.sqrt(2.0 / math.e) / s))
    return suite


# ---------------------------------------------------------------------------
# Error decay experiment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureRow:
    space: str
    N: int
    f_name: str
    error: float
    bound: float
    mesh: float
    separation: float
    ratio: float


def error_decay_experiment(
    space: AtomizedSpace,
    f_suite: Sequence[TestFunction],
    N_list: Sequence[int],
    delta: float = 1.0 / 3.0,
    tree: CubeTree | None = None,
    probe: RegularityReport | None = None,
    mode: str = "equal",
) -> list[QuadratureRow]:
    """Integrate the suite with one rule per N and tabulate errors.

    Every row's error is certified against the Riemann bound
    Lip(f) * max region diameter; the table is the raw material for the
    log-log decay-rate fit.
    """
    if sorted(N_list) != list(N_list):
        raise ValueError("N_list must be increasing")
    if tree is None:
        tree = build_cube_tree(space, delta)
    if probe is None:
        probe = default_regularity_probe(space, exponent=space.d_hint, full_range=True)
    rows = []
    for N in N_list:
        if mode == "equal":
            part = equal_measure_partition(space, tree, N, probe)
        else:
            part = quasi_equal_partition(space, tree, N, probe)
        rule = rule_from_partition(space, part)
        max_diam = float(region_diameters(space, part).max())
        for tf in f_suite:
            err = abs(integrate(rule, tf.fn) - atom_integral(space, tf.fn))
            rows.append(
                QuadratureRow(
                    space=space.kind,
                    N=N,
                    f_name=tf.name,
                    error=err,
                    bound=tf.lipschitz * max_diam,
                    mesh=rule.mesh,
                    separation=rule.separation,
                    ratio=rule.mesh / rule.separation,
                )
            )
    return rows


def error_slopes(rows: Sequence[QuadratureRow]) -> dict[str, float]:
    """Least-squares slope of log error vs log N per test function."""
    out: dict[str, float] = {}
    names = sorted({r.f_name for r in rows})
    for name in names:
        pts = [(r.N, max(r.error, 1e-16)) for r in rows if r.f_name == name]
        if len(pts) < 2:
            continue
        x = np.log([p[0] for p in pts])
        y = np.log([p[1] for p in pts])
        out[name] = float(np.polyfit(x, y, 1)[0])
    return out


def rows_to_csv(rows: Sequence[QuadratureRow]) -> str:
    lines = ["space,N,f_name,error,bound,mesh,separation,ratio"]
    for r in rows:
        lines.append(
            f"{r.space},{r.N},{r.f_name},{r.error!r},{r.bound!r},"
            f"{r.mesh!r},{r.separation!r},{r.ratio!r}"
        )
    return "\n".join(lines) + "\n"
