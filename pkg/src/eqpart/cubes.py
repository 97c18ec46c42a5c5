"""Hierarchical cell families with inner/outer ball certificates.

A :class:`CubeTree` holds, for each generation k, a partition of the atoms
into cells built around the centers of a nested maximal net at radius
delta^k (the construction follows the classical net-based scheme of
Christ/David for spaces of homogeneous type).  Per generation the cells
partition all atoms exactly; across generations each cell is the disjoint
union of its children.  The realized inner/outer ball constants a0_hat and
a1_hat are measured from the built tree: every cell of generation k contains
all atoms strictly within a0_hat * delta^k of its center and is contained in
the closed ball of radius a1_hat * delta^k around it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConstructionDegenerateError
from .nets import nested_nets
from .spaces import AtomizedSpace

_KNN_START = 8
_KNN_CAP = 4096


# ---------------------------------------------------------------------------
# Robust exact nearest-center assignment
# ---------------------------------------------------------------------------


def assign_nearest(
    space: AtomizedSpace,
    center_atom_ids: np.ndarray,
    query_ids: np.ndarray | None = None,
) -> np.ndarray:
    """Index of the nearest center for each query atom, exact with ties
    broken towards the lowest center position in ``center_atom_ids``.

    Candidates come from a KD-tree and are re-scored with the canonical
    metric; rows whose k-th KD distance could still hide a closer or tied
    center are re-queried with a larger k, so the result equals a full
    brute-force argmin.
    """
    metric = space.metric
    centers = np.asarray(center_atom_ids, dtype=np.int64)
    m = len(centers)
    cpos = space.positions[centers]
    if query_ids is None:
        qpos = space.positions
        nq = space.atom_count
    else:
        qpos = space.positions[np.asarray(query_ids, dtype=np.int64)]
        nq = len(qpos)

    if m <= 64:
        out = np.empty(nq, dtype=np.int64)
        chunk = max(1, 2**22 // max(m, 1))
        for lo in range(0, nq, chunk):
            d = metric.pairwise(qpos[lo : lo + chunk], cpos)
            out[lo : lo + chunk] = np.argmin(d, axis=1)
        return out

    from scipy.spatial import cKDTree

    tree = cKDTree(metric.kd_embed(cpos))
    qemb = metric.kd_embed(qpos)
    out = np.full(nq, -1, dtype=np.int64)
    rows = np.arange(nq)
    k = min(_KNN_START, m)
    while len(rows):
        kd_d, cand = tree.query(qemb[rows], k=k, p=metric.kd_p)
        if k == 1:
            kd_d = kd_d[:, None]
            cand = cand[:, None]
        d_can = np.empty_like(kd_d)
        for j in range(k):
            d_can[:, j] = metric.rowwise(qpos[rows], cpos[cand[:, j]])
        rowmin = d_can.min(axis=1)
        tied = np.where(d_can <= rowmin[:, None], cand, m)
        best = tied.min(axis=1)
        # safe unless an unexamined center could be at most rowmin away
        safe = (k >= m) | (kd_d[:, -1] > metric.kd_radius(rowmin) * (1.0 + 1e-9))
        out[rows[safe]] = best[safe]
        rows = rows[~safe]
        if k >= m:
            break
        k = min(m, k * 4)
    if len(rows):  # brute force the stragglers
        for r in rows:
            d = metric.pairwise(qpos[r : r + 1], cpos)[0]
            out[r] = int(np.argmin(d))
    return out


def _nearest_external_distances(
    space: AtomizedSpace, center_atom_ids: np.ndarray, labels: np.ndarray
) -> np.ndarray:
    """For each cell center, the exact distance to the nearest atom that does
    not belong to that cell (inf when the cell is the whole space)."""
    metric = space.metric
    centers = np.asarray(center_atom_ids, dtype=np.int64)
    m = len(centers)
    out = np.full(m, np.inf)
    if m == 1:
        return out
    cpos = space.positions[centers]
    cemb = metric.kd_embed(cpos)
    tree = space.kdtree()
    rows = np.arange(m)
    k = min(64, space.atom_count)
    while len(rows):
        kd_d, cand = tree.query(cemb[rows], k=k, p=metric.kd_p)
        if k == 1:
            kd_d = kd_d[:, None]
            cand = cand[:, None]
        d_can = np.empty_like(kd_d)
        for j in range(k):
            d_can[:, j] = metric.rowwise(cpos[rows], space.positions[cand[:, j]])
        external = labels[cand] != rows[:, None]
        d_ext = np.where(external, d_can, np.inf).min(axis=1)
        found = np.isfinite(d_ext)
        safe = found & (
            (k >= space.atom_count) | (kd_d[:, -1] > metric.kd_radius(d_ext) * (1.0 + 1e-9))
        )
        out[rows[safe]] = d_ext[safe]
        rows = rows[~safe]
        if k >= min(space.atom_count, _KNN_CAP):
            break
        k = min(space.atom_count, k * 4)
    for r in rows:  # large cells: full scan
        d = metric.pairwise(cpos[r : r + 1], space.positions)[0]
        ext = labels != r
        out[r] = float(d[ext].min()) if ext.any() else np.inf
    return out


# ---------------------------------------------------------------------------
# Cube tree
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Cube:
    """Materialized view of one cell."""

    k: int
    alpha: int
    center_id: int
    atom_ids: np.ndarray
    parent: tuple[int, int] | None
    children: list[tuple[int, int]]
    measure: float
    inner_radius: float
    outer_radius: float


@dataclass(eq=False)
class CubeTree:
    space: AtomizedSpace
    delta: float
    k_min: int
    k_max: int
    center_ids: dict[int, np.ndarray]
    labels: dict[int, np.ndarray]
    parent_index: dict[int, np.ndarray]
    measures: dict[int, np.ndarray]
    inner_radii: dict[int, np.ndarray]
    outer_radii: dict[int, np.ndarray]
    a0_hat: float
    a1_hat: float
    _cube_order: dict = field(default_factory=dict, repr=False)

    @property
    def generations(self) -> range:
        return range(self.k_min, self.k_max + 1)

    def cube_count(self, k: int) -> int:
        return len(self.center_ids[k])

    def scale(self, k: int) -> float:
        return self.delta**k

    def atoms_by_cube(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """(order, starts): atom ids grouped by cell, as slice boundaries."""
        if k not in self._cube_order:
            lab = self.labels[k]
            order = np.argsort(lab, kind="stable")
            starts = np.searchsorted(lab[order], np.arange(self.cube_count(k) + 1))
            self._cube_order[k] = (order, starts)
        return self._cube_order[k]

    def cube_atoms(self, k: int, alpha: int) -> np.ndarray:
        order, starts = self.atoms_by_cube(k)
        return order[starts[alpha] : starts[alpha + 1]]

    def children_of(self, k: int, alpha: int) -> list[tuple[int, int]]:
        if k >= self.k_max:
            return []
        idx = np.nonzero(self.parent_index[k + 1] == alpha)[0]
        return [(k + 1, int(i)) for i in idx]

    def cube(self, k: int, alpha: int) -> Cube:
        parent = None
        if k > self.k_min:
            parent = (k - 1, int(self.parent_index[k][alpha]))
        return Cube(
            k=k,
            alpha=int(alpha),
            center_id=int(self.center_ids[k][alpha]),
            atom_ids=self.cube_atoms(k, alpha),
            parent=parent,
            children=self.children_of(k, alpha),
            measure=float(self.measures[k][alpha]),
            inner_radius=float(self.inner_radii[k][alpha]),
            outer_radius=float(self.outer_radii[k][alpha]),
        )

    def ancestor_index(self, k_fine: int, k_coarse: int) -> np.ndarray:
        """Map cell indices of generation k_fine to indices at k_coarse."""
        if not (self.k_min <= k_coarse <= k_fine <= self.k_max):
            raise ValueError("generation out of range")
        idx = np.arange(self.cube_count(k_fine))
        for k in range(k_fine, k_coarse, -1):
            idx = self.parent_index[k][idx]
        return idx




def default_generation_range(space: AtomizedSpace, delta: float) -> tuple[int, int]:
    """Coarsest generation one step above the diameter scale; finest at the
    atom resolution limit delta^k >= 4h."""
    k_min = int(math.floor(math.log(space.diam) / math.log(delta))) - 1
    k_max = int(math.floor(math.log(4.0 * space.resolution) / math.log(delta)))
    while delta**k_max < 4.0 * space.resolution and k_max > k_min:
        k_max -= 1
    return k_min, k_max


def build_cube_tree(
    space: AtomizedSpace,
    delta: float = 0.25,
    k_min: int | None = None,
    k_max: int | None = None,
) -> CubeTree:
    """Build the nested cell family over nets at radii delta^k.

    Finest generation: every atom joins its nearest finest-net center (ties
    to the lower center id).  Coarser generations: every child center joins
    its nearest coarser center (itself when present in both nets), and a
    cell's atom set is the union of its children's.
    """
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must lie in (0, 1)")
    d_min, d_max = default_generation_range(space, delta)
    if k_min is None:
        k_min = d_min
    if k_max is None:
        k_max = d_max
    nets = nested_nets(space, delta, k_min, k_max)

    center_ids: dict[int, np.ndarray] = {}
    for k, net in zip(range(k_min, k_max + 1), nets):
        center_ids[k] = np.sort(net.center_ids)

    labels: dict[int, np.ndarray] = {}
    parent_index: dict[int, np.ndarray] = {}
    labels[k_max] = assign_nearest(space, center_ids[k_max])
    for k in range(k_max - 1, k_min - 1, -1):
        pidx = assign_nearest(space, center_ids[k], query_ids=center_ids[k + 1])
        parent_index[k + 1] = pidx
        labels[k] = pidx[labels[k + 1]]

    measures: dict[int, np.ndarray] = {}
    inner_radii: dict[int, np.ndarray] = {}
    outer_radii: dict[int, np.ndarray] = {}
    a0_hat = np.inf
    a1_hat = 0.0
    for k in range(k_min, k_max + 1):
        m = len(center_ids[k])
        lab = labels[k]
        measures[k] = np.bincount(lab, weights=space.weights, minlength=m)
        own = space.metric.rowwise(
            space.positions, space.positions[center_ids[k][lab]]
        )
        outer = np.zeros(m)
        np.maximum.at(outer, lab, own)
        outer_radii[k] = outer
        inner_radii[k] = _nearest_external_distances(space, center_ids[k], lab)
        scale = delta**k
        a1_hat = max(a1_hat, float(outer.max() / scale))
        finite = np.isfinite(inner_radii[k])
        if finite.any():
            a0_hat = min(a0_hat, float(inner_radii[k][finite].min() / scale))

    if not np.isfinite(a0_hat) or a0_hat <= 0.0:
        raise ConstructionDegenerateError(
            "no cell carries an interior ball beyond its own center; decrease delta"
        )

    return CubeTree(
        space=space,
        delta=delta,
        k_min=k_min,
        k_max=k_max,
        center_ids=center_ids,
        labels=labels,
        parent_index=parent_index,
        measures=measures,
        inner_radii=inner_radii,
        outer_radii=outer_radii,
        a0_hat=float(a0_hat),
        a1_hat=float(a1_hat),
    )


# ---------------------------------------------------------------------------
# Overlap graph edges
# ---------------------------------------------------------------------------


def neighbor_pairs(tree: CubeTree, k: int) -> np.ndarray:
    """Unordered cell pairs (alpha, beta) whose outer balls can intersect:
    center distance strictly below 2 * a1_hat * delta^k.

    The center-distance rule contains every pair whose outer balls share an
    atom, so graph connectivity is preserved and the 3*a1 envelope bound
    still applies through the triangle inequality.
    """
    if k not in tree.labels:
        raise ValueError(f"generation {k} not in tree range {tree.k_min}..{tree.k_max}")
    space = tree.space
    centers = tree.center_ids[k]
    m = len(centers)
    if m < 2:
        return np.empty((0, 2), dtype=np.int64)
    threshold = 2.0 * tree.a1_hat * tree.scale(k)
    cpos = space.positions[centers]
    if m <= 2048:
        d = space.metric.pairwise(cpos, cpos)
        a, b = np.nonzero(np.triu(d < threshold, 1))
        pairs = np.column_stack([a, b])
    else:
        from scipy.spatial import cKDTree

        ctree = cKDTree(space.metric.kd_embed(cpos))
        cand = ctree.query_pairs(
            float(space.metric.kd_radius(threshold)) * (1.0 + 1e-9),
            p=space.metric.kd_p,
            output_type="ndarray",
        )
        if len(cand) == 0:
            return np.empty((0, 2), dtype=np.int64)
        d = space.metric.rowwise(cpos[cand[:, 0]], cpos[cand[:, 1]])
        pairs = cand[d < threshold]
    pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
    return pairs.astype(np.int64)


def envelope_violations(tree: CubeTree, k: int) -> tuple[int, float]:
    """Check that each cell plus all its graph neighbors sits inside the ball
    of radius 3 * a1_hat * delta^k around the cell center.

    Returns (violation count, worst ratio of atom distance to that radius).
    """
    space = tree.space
    centers = tree.center_ids[k]
    m = len(centers)
    radius = 3.0 * tree.a1_hat * tree.scale(k)
    order, starts = tree.atoms_by_cube(k)
    worst = float(tree.outer_radii[k].max() / radius) if m else 0.0
    violations = int(np.count_nonzero(tree.outer_radii[k] > radius))
    for a, b in neighbor_pairs(tree, k):
        pa = space.positions[centers[a]][None, :]
        pb = space.positions[centers[b]][None, :]
        atoms_a = order[starts[a] : starts[a + 1]]
        atoms_b = order[starts[b] : starts[b + 1]]
        d_ab = float(space.metric.pairwise(pb, space.positions[atoms_a]).max())
        d_ba = float(space.metric.pairwise(pa, space.positions[atoms_b]).max())
        worst = max(worst, d_ab / radius, d_ba / radius)
        if d_ab > radius or d_ba > radius:
            violations += 1
    return violations, worst


# ---------------------------------------------------------------------------
# Verification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CubeAxiomReport:
    covers: bool
    disjoint: bool
    nested: bool
    inner_ball: bool
    outer_ball: bool
    a0_hat: float
    a1_hat: float
    ratio: float
    cube_counts: dict[int, int]
    max_total_measure_error: float

    @property
    def all_ok(self) -> bool:
        return self.covers and self.disjoint and self.nested and self.inner_ball and self.outer_ball


def verify_cube_axioms(tree: CubeTree, spot_sample: int = 64) -> CubeAxiomReport:
    """Re-check the five cell-family properties on the built tree.

    Cover/disjoint/nesting are exact set assertions on atom labels; the ball
    properties re-derive the sandwich from stored radii, with a brute-force
    spot check of the stored radii on a deterministic cell sample.
    """
    space = tree.space
    if tree.a0_hat <= 0:
        raise ConstructionDegenerateError("tree has a0_hat = 0")
    covers = True
    disjoint = True
    nested = True
    inner_ok = True
    outer_ok = True
    max_err = 0.0
    for k in tree.generations:
        lab = tree.labels[k]
        m = tree.cube_count(k)
        covers &= bool(np.all((lab >= 0) & (lab < m)))
        total = float(tree.measures[k].sum())
        max_err = max(max_err, abs(total - space.total_measure))
        disjoint &= abs(total - space.total_measure) < 1e-9
        if k > tree.k_min:
            nested &= bool(np.array_equal(tree.labels[k - 1], tree.parent_index[k][lab]))
        scale = tree.scale(k)
        inner_ok &= bool(
            np.all(tree.inner_radii[k] >= tree.a0_hat * scale * (1.0 - 1e-12))
        )
        outer_ok &= bool(np.all(tree.outer_radii[k] <= tree.a1_hat * scale * (1.0 + 1e-12)))
        # spot-check stored radii against a direct scan
        step = max(1, m // spot_sample)
        for alpha in range(0, m, step):
            atoms = tree.cube_atoms(k, alpha)
            z = space.positions[tree.center_ids[k][alpha]][None, :]
            d = space.metric.pairwise(z, space.positions)[0]
            outer_ok &= abs(float(d[atoms].max()) - tree.outer_radii[k][alpha]) < 1e-12
            ext = np.ones(space.atom_count, dtype=bool)
            ext[atoms] = False
            if ext.any():
                inner_ok &= abs(float(d[ext].min()) - tree.inner_radii[k][alpha]) < 1e-12
    return CubeAxiomReport(
        covers=covers,
        disjoint=disjoint,
        nested=nested,
        inner_ball=inner_ok,
        outer_ball=outer_ok,
        a0_hat=tree.a0_hat,
        a1_hat=tree.a1_hat,
        ratio=tree.a1_hat / tree.a0_hat,
        cube_counts={k: tree.cube_count(k) for k in tree.generations},
        max_total_measure_error=max_err,
    )


def tree_to_json(tree: CubeTree) -> dict:
    generations = []
    for k in tree.generations:
        cubes = []
        for alpha in range(tree.cube_count(k)):
            parent = None
            if k > tree.k_min:
                parent = [k - 1, int(tree.parent_index[k][alpha])]
            cubes.append(
                {
                    "alpha": alpha,
                    "center_id": int(tree.center_ids[k][alpha]),
                    "atom_ids": [int(i) for i in np.sort(tree.cube_atoms(k, alpha))],
                    "parent": parent,
                }
            )
        generations.append({"k": k, "cubes": cubes})
    return {
        "delta": tree.delta,
        "a0_hat": tree.a0_hat,
        "a1_hat": tree.a1_hat,
        "generations": generations,
    }
