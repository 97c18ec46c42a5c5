"""Maximal separated nets by greedy farthest-point selection.

The greedy rule is fixed: seed at atom 0, then repeatedly add the atom
farthest from the current centers (ties broken by lower atom id) until that
farthest distance drops below the target radius.  The resulting center set is
r-separated and r-covering, and refining the same state with a smaller radius
yields nested nets across scales.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .errors import ResolutionTooCoarseError
from .spaces import AtomizedSpace


@dataclass(frozen=True)
class SeparatedNet:
    """Centers of a maximal r-separated net, in greedy selection order."""

    r: float
    center_ids: np.ndarray
    covering_radius: float

    def __len__(self) -> int:
        return len(self.center_ids)


class FarthestPointEngine:
    """Incremental farthest-point refinement over one space.

    Keeps the current distance-to-net array and a lazy max-heap so that
    successive calls to :meth:`refine` with decreasing radii extend the same
    net.  Candidate updates after each insertion are restricted to a KD-tree
    ball around the new center, which cannot change the selected sequence:
    only atoms closer to the new center than their current net distance can
    improve, and all of those lie inside the queried ball.
    """

    def __init__(self, space: AtomizedSpace, seed_id: int = 0):
        self.space = space
        self.dist = space.dists_from(seed_id)
        self.dist[seed_id] = 0.0
        self.centers: list[int] = [int(seed_id)]
        self._heap: list[tuple[float, int]] = [(-d, i) for i, d in enumerate(self.dist)]
        heapq.heapify(self._heap)
        self._max_heap_len = max(4 * space.atom_count, 1024)
        self._use_tree = False  # full scans beat ball queries while balls are big

    def _pop_current(self) -> tuple[float, int]:
        heap = self._heap
        while True:
            negd, i = heap[0]
            if -negd == self.dist[i]:
                return -negd, i
            heapq.heappop(heap)  # stale entry

    def covering_radius(self) -> float:
        return self._pop_current()[0]

    def _rebuild_heap(self) -> None:
        self._heap = [(-d, i) for i, d in enumerate(self.dist)]
        heapq.heapify(self._heap)

    def _add_center(self, c: int, d_max: float) -> None:
        space = self.space
        pos = space.positions
        if self._use_tree:
            radius = space.metric.kd_radius(d_max) * (1.0 + 1e-9)
            cand = space.kdtree().query_ball_point(
                space.metric.kd_embed(pos[c : c + 1])[0],
                radius,
                p=space.metric.kd_p,
                return_sorted=False,
            )
            cand = np.asarray(cand, dtype=np.int64)
            d_new = space.metric.pairwise(pos[c : c + 1], pos[cand])[0]
            improved = d_new < self.dist[cand]
            ids = cand[improved]
            vals = d_new[improved]
        else:
            d_row = space.metric.pairwise(pos[c : c + 1], pos)[0]
            # only atoms inside B(c, d_max) can improve; switch to ball
            # queries once that ball has emptied out (same update set either
            # way, so the selected sequence is unchanged)
            if np.count_nonzero(d_row < d_max) < space.atom_count // 32:
                self._use_tree = True
            improved = d_row < self.dist
            ids = np.nonzero(improved)[0]
            vals = d_row[ids]
        self.dist[ids] = vals
        heap = self._heap
        for i, v in zip(ids.tolist(), vals.tolist()):
            heapq.heappush(heap, (-v, i))
        if len(heap) > self._max_heap_len:
            self._rebuild_heap()
        self.centers.append(int(c))

    def refine(self, r: float) -> None:
        """Extend the net until every atom lies strictly within r of it."""
        while True:
            d, i = self._pop_current()
            if d < r:
                return
            self._add_center(i, d)

    def snapshot(self, r: float) -> SeparatedNet:
        return SeparatedNet(
            r=float(r),
            center_ids=np.asarray(self.centers, dtype=np.int64),
            covering_radius=float(self.covering_radius()),
        )


def maximal_net(space: AtomizedSpace, r: float) -> SeparatedNet:
    """Greedy maximal r-separated net seeded at atom 0."""
    if not (0.0 < r <= space.diam):
        raise ValueError(f"net radius must lie in (0, diam] = (0, {space.diam:.6g}]")
    engine = FarthestPointEngine(space)
    engine.refine(r)
    return engine.snapshot(r)


def maximal_net_reference(space: AtomizedSpace, r: float) -> SeparatedNet:
    """Plain O(n * centers) greedy; the oracle the fast engine must match."""
    if not (0.0 < r <= space.diam):
        raise ValueError(f"net radius must lie in (0, diam] = (0, {space.diam:.6g}]")
    dist = space.dists_from(0)
    dist[0] = 0.0
    centers = [0]
    while True:
        far = int(np.argmax(dist))  # first max = lowest id on ties
        if dist[far] < r:
            break
        centers.append(far)
        dist = np.minimum(dist, space.dists_from(far))
    return SeparatedNet(
        r=float(r),
        center_ids=np.asarray(centers, dtype=np.int64),
        covering_radius=float(dist.max()),
    )


def nested_nets(
    space: AtomizedSpace, delta: float, k_min: int, k_max: int
) -> list[SeparatedNet]:
    """Nets at radii delta^k for k = k_min..k_max, nested by construction.

    Generations with delta^k above the diameter collapse to the single seed
    center.  The finest generation must stay above the atom resolution:
    delta^k_max >= 4h, else the cells would degenerate to single atoms.
    """
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must lie in (0, 1)")
    if k_min > k_max:
        raise ValueError("k_min must not exceed k_max")
    r_finest = delta**k_max
    if r_finest < 4.0 * space.resolution:
        raise ResolutionTooCoarseError(
            f"delta^k_max = {r_finest:.3g} is below 4h = {4.0 * space.resolution:.3g}; "
            "cells would degenerate to single atoms"
        )
    engine = FarthestPointEngine(space)
    nets = []
    for k in range(k_min, k_max + 1):
        engine.refine(delta**k)
        nets.append(engine.snapshot(delta**k))
    return nets


# ---------------------------------------------------------------------------
# Verification helpers (used by tests and reports)
# ---------------------------------------------------------------------------


def net_separation(space: AtomizedSpace, net: SeparatedNet) -> float:
    """Exact minimum pairwise distance between net centers."""
    ids = net.center_ids
    if len(ids) < 2:
        return math.inf
    pos = space.positions[ids]
    if len(ids) <= 1024:
        d = space.metric.pairwise(pos, pos)
        np.fill_diagonal(d, np.inf)
        return float(d.min())
    from scipy.spatial import cKDTree

    tree = cKDTree(space.metric.kd_embed(pos))
    _, nn = tree.query(space.metric.kd_embed(pos), k=2)
    return float(space.metric.rowwise(pos, pos[nn[:, 1]]).min())


def net_covering(space: AtomizedSpace, net: SeparatedNet, budget: int = 2**24) -> float:
    """Exact maximum distance from any atom to the net."""
    ids = net.center_ids
    cpos = space.positions[ids]
    chunk = max(1, budget // max(1, len(ids)))
    worst = 0.0
    for lo in range(0, space.atom_count, chunk):
        d = space.metric.pairwise(space.positions[lo : lo + chunk], cpos)
        worst = max(worst, float(d.min(axis=1).max()))
    return worst
