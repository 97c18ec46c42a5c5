"""Equal-measure, diameter-bounded partitions built from cell trees.

Two constructions are provided:

* :func:`quasi_equal_partition` groups fine cells inside coarse cells; the
  regions have comparable (not equal) masses and two-sided ball bounds.  No
  connectivity is required.
* :func:`equal_measure_partition` produces regions of mass exactly 1/N (up
  to atom quantization).  It walks a rooted spanning tree of the working
  scale's overlap graph from the leaves to the root; each node carves out
  the remainder mass it owes its parent (a compact cap at their shared
  boundary, sized by :func:`extract_subset`), then cuts the rest of its
  pool, laid out along a locality-preserving sweep, into consecutive runs
  of mass 1/N.  Every run contains a whole fine cell, which serves as the
  region's nucleus and inner-ball certificate.  The space must be connected
  at the working scale or the overlap graph splits and the construction
  aborts.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .cubes import CubeTree, neighbor_pairs
from .errors import (
    ConstructionDegenerateError,
    ResolutionTooCoarseError,
    SpaceNotConnectedError,
)
from .spaces import (
    AtomizedSpace,
    RegularityReport,
    default_regularity_probe,
    sweep_rank,
)

_REL_SLACK = 1e-12


# ---------------------------------------------------------------------------
# Overlap graph and rooted spanning tree
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OverlapGraph:
    """Vertices are working-scale cells; edges join cells whose outer balls
    can intersect.  Connected whenever the underlying space is connected."""

    n_vertices: int
    edges: np.ndarray

    def adjacency(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in range(self.n_vertices)]
        for a, b in self.edges:
            adj[int(a)].append(int(b))
            adj[int(b)].append(int(a))
        for lst in adj:
            lst.sort()
        return adj


@dataclass(frozen=True)
class RootedTree:
    """Spanning tree directed towards a root at (or next to) the tree center.

    ``order`` is a BFS order from the root, so processing its reverse visits
    every child before its parent.
    """

    root: int
    parent: np.ndarray
    order: np.ndarray

    @property
    def processing_order(self) -> np.ndarray:
        return self.order[::-1]

    def children(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(len(self.parent))]
        for v, p in enumerate(self.parent):
            if p >= 0:
                out[int(p)].append(v)
        return out


def spanning_tree_rooted(
    graph: OverlapGraph, edge_weights: np.ndarray | None = None
) -> RootedTree:
    """Spanning tree of the overlap graph, re-rooted at its center.

    Without weights this is the BFS tree from vertex 0.  With per-edge
    weights (center distances, in the partition) a minimum spanning tree is
    grown instead, so that every parent/child pair is geometrically adjacent
    and remainder mass never hops over an intermediate cell.  The root (or
    the lower-indexed vertex of a bicenter pair) is found by iterated leaf
    stripping on the tree.
    """
    nv = graph.n_vertices
    if nv == 0:
        raise ValueError("empty graph")
    tree_adj: list[list[int]] = [[] for _ in range(nv)]
    seen = np.zeros(nv, dtype=bool)
    seen[0] = True
    if edge_weights is None:
        adj = graph.adjacency()
        queue = deque([0])
        while queue:
            v = queue.popleft()
            for u in adj[v]:
                if not seen[u]:
                    seen[u] = True
                    tree_adj[v].append(u)
                    tree_adj[u].append(v)
                    queue.append(u)
    else:
        import heapq

        wadj: list[list[tuple[float, int]]] = [[] for _ in range(nv)]
        for (a, b), wt in zip(graph.edges, edge_weights):
            wadj[int(a)].append((float(wt), int(b)))
            wadj[int(b)].append((float(wt), int(a)))
        heap: list[tuple[float, int, int]] = [(wt, 0, u) for wt, u in sorted(wadj[0])]
        heapq.heapify(heap)
        while heap:
            wt, v, u = heapq.heappop(heap)
            if seen[u]:
                continue
            seen[u] = True
            tree_adj[v].append(u)
            tree_adj[u].append(v)
            for wt2, u2 in wadj[u]:
                if not seen[u2]:
                    heapq.heappush(heap, (wt2, u, u2))
    if not seen.all():
        missing = int(np.count_nonzero(~seen))
        raise SpaceNotConnectedError(
            f"overlap graph is disconnected ({missing} of {nv} cells unreachable); "
            "an equal-measure partition with the required diameter bound cannot "
            "exist on a disconnected space once the working scale is finer than "
            "the gap between components"
        )

    # iterated leaf stripping to the center / bicenter
    degree = np.array([len(a) for a in tree_adj])
    alive = np.ones(nv, dtype=bool)
    remaining = nv
    leaves = deque([v for v in range(nv) if degree[v] <= 1])
    while remaining > 2:
        layer = list(leaves)
        leaves = deque()
        for v in layer:
            if not alive[v]:
                continue
            alive[v] = False
            remaining -= 1
            for w in tree_adj[v]:
                if alive[w]:
                    degree[w] -= 1
                    if degree[w] == 1:
                        leaves.append(w)
        if not layer:
            break
    root = int(np.nonzero(alive)[0].min())

    parent = np.full(nv, -1, dtype=np.int64)
    order = np.empty(nv, dtype=np.int64)
    seen[:] = False
    seen[root] = True
    queue = deque([root])
    pos = 0
    while queue:
        v = queue.popleft()
        order[pos] = v
        pos += 1
        for w in tree_adj[v]:
            if not seen[w]:
                seen[w] = True
                parent[w] = v
                queue.append(w)
    return RootedTree(root=root, parent=parent, order=order)


# ---------------------------------------------------------------------------
# Subset extraction at a target mass
# ---------------------------------------------------------------------------


def extract_subset(
    space: AtomizedSpace,
    tree: CubeTree,
    atom_ids: np.ndarray,
    t: float,
    around: int | None = None,
    k_start: int | None = None,
) -> np.ndarray:
    """A subset T of the given atoms with mass within one atom weight of t.

    Walks the cell hierarchy from coarse to fine: at the first generation
    whose intersections with the remaining pool all weigh at most the
    remaining target, whole intersections are taken greedily, then the walk
    recurses on the remainder and finally tops up with individual atoms.
    When ``around`` is an atom id, intersections (and atoms) are consumed in
    order of distance from it, which keeps the extracted set spatially
    compact; otherwise cell index order is used.
    """
    S = np.asarray(atom_ids, dtype=np.int64)
    mu_S = float(space.weights[S].sum())
    slack = _REL_SLACK * max(1.0, mu_S)
    if t < -slack or t > mu_S + slack:
        raise ValueError(f"target mass {t} outside [0, {mu_S}]")
    if t <= slack:
        return np.empty(0, dtype=np.int64)
    if t >= mu_S - slack:
        return np.sort(S)

    w = space.weights
    around_pos = None if around is None else space.positions[int(around)][None, :]
    taken: list[np.ndarray] = []
    remaining = S
    t_rem = float(t)
    first_k = tree.k_min if k_start is None else max(tree.k_min, k_start)
    for k in range(first_k, tree.k_max + 1):
        labels = tree.labels[k][remaining]
        m = tree.cube_count(k)
        sums = np.bincount(labels, weights=w[remaining], minlength=m)
        if sums.max(initial=0.0) > t_rem + slack:
            continue  # intersections still too heavy at this generation
        active = np.nonzero(sums > 0)[0]
        if len(active) == 0:
            break
        if around_pos is not None:
            cpos = space.positions[tree.center_ids[k][active]]
            d = space.metric.pairwise(around_pos, cpos)[0]
            active = active[np.lexsort((active, d))]
        take_mask = np.zeros(m, dtype=bool)
        took_any = False
        for alpha in active:
            s = sums[alpha]
            if s > t_rem + slack:
                break  # first non-fitting set ends this pass
            take_mask[alpha] = True
            t_rem -= float(s)
            took_any = True
            if t_rem <= slack:
                break
        if took_any:
            sel = take_mask[labels]
            taken.append(remaining[sel])
            remaining = remaining[~sel]
        if t_rem <= slack or len(remaining) == 0:
            break

    if t_rem > slack and len(remaining):
        # top up atom by atom
        if around_pos is not None:
            d = space.metric.pairwise(around_pos, space.positions[remaining])[0]
            cand = remaining[np.lexsort((remaining, d))]
        else:
            cand = np.sort(remaining)
        picks = []
        for a in cand:
            if w[a] > t_rem + slack:
                break
            picks.append(a)
            t_rem -= float(w[a])
            if t_rem <= slack:
                break
        if picks:
            taken.append(np.asarray(picks, dtype=np.int64))

    if not taken:
        return np.empty(0, dtype=np.int64)
    return np.sort(np.concatenate(taken))


def _rechain_pieces(space: AtomizedSpace, sweep: np.ndarray, stream: np.ndarray) -> np.ndarray:
    """Reassemble a cell-restricted sweep stream into one local walk.

    Restricting the global sweep to one cell fragments it wherever the
    sweep makes an excursion through a neighbouring cell: a few large
    contiguous pieces plus many boundary crumbs.  The large pieces are
    chained by cheapest insertion (trying both orientations), which cannot
    strand a piece far from its neighbours, and every crumb is spliced next
    to its geometrically nearest stream atom.
    """
    ranks = sweep[stream]
    cuts = np.nonzero(np.diff(ranks) > 1)[0]
    if len(cuts) == 0:
        return stream
    metric = space.metric
    pos = space.positions
    bounds = np.concatenate([[0], cuts + 1, [len(stream)]])
    pieces = [stream[bounds[i] : bounds[i + 1]] for i in range(len(bounds) - 1)]
    sizes = np.asarray([len(p) for p in pieces])
    thresh = max(32, len(stream) // 4096)
    anchor_ids = [i for i in range(len(pieces)) if sizes[i] >= thresh]
    if len(anchor_ids) == 0:
        anchor_ids = [int(np.argmax(sizes))]
    crumb_ids = [i for i in range(len(pieces)) if i not in set(anchor_ids)]

    # endpoint-distance matrix over oriented anchors: entry 2i is piece i
    # forward, 2i+1 reversed; cost of placing b after a = D[a, b]
    A = len(anchor_ids)
    heads = pos[[pieces[i][0] for i in anchor_ids]]
    tails = pos[[pieces[i][-1] for i in anchor_ids]]
    ends = np.empty((2 * A, 2, pos.shape[1]))
    ends[0::2, 0], ends[0::2, 1] = heads, tails
    ends[1::2, 0], ends[1::2, 1] = tails, heads
    # squared links: one long jump costs more than several short ones
    D = metric.pairwise(ends[:, 1], ends[:, 0]) ** 2

    chain: list[int] = [0]
    for pid in range(1, A):
        best = (math.inf, 0, 0)
        for o in (2 * pid, 2 * pid + 1):
            for at in range(len(chain) + 1):
                cost = 0.0
                if at > 0:
                    cost += D[chain[at - 1], o]
                if at < len(chain):
                    cost += D[o, chain[at]]
                    if at > 0:
                        cost -= D[chain[at - 1], chain[at]]
                if cost < best[0]:
                    best = (cost, at, o)
        chain.insert(best[1], best[2])

    # 2-opt (segment reversal with orientation flips) and single-piece
    # relocation, with O(1) move deltas, until no move shortens the walk
    improved = len(chain) > 2
    passes = 0
    while improved and passes < 60:
        improved = False
        passes += 1
        L = len(chain)
        for i in range(L - 1):
            before = D[chain[i - 1], chain[i]] if i > 0 else 0.0
            for j in range(i + 1, L):
                after = D[chain[j], chain[j + 1]] if j + 1 < L else 0.0
                new_before = D[chain[i - 1], chain[j] ^ 1] if i > 0 else 0.0
                new_after = D[chain[i] ^ 1, chain[j + 1]] if j + 1 < L else 0.0
                if new_before + new_after < before + after - 1e-18:
                    chain[i : j + 1] = [o ^ 1 for o in reversed(chain[i : j + 1])]
                    improved = True
                    before = D[chain[i - 1], chain[i]] if i > 0 else 0.0
        for i in range(len(chain)):
            o0 = chain[i]
            gain = 0.0
            if i > 0:
                gain += D[chain[i - 1], o0]
            if i + 1 < len(chain):
                gain += D[o0, chain[i + 1]]
            if 0 < i < len(chain) - 1:
                gain -= D[chain[i - 1], chain[i + 1]]
            rest = chain[:i] + chain[i + 1 :]
            best = (gain - 1e-18, None, None)
            for at in range(len(rest) + 1):
                for o in (o0, o0 ^ 1):
                    cost = 0.0
                    if at > 0:
                        cost += D[rest[at - 1], o]
                    if at < len(rest):
                        cost += D[o, rest[at]]
                        if at > 0:
                            cost -= D[rest[at - 1], rest[at]]
                    if cost < best[0]:
                        best = (cost, at, o)
            if best[1] is not None and best[1] != i:
                chain = rest[: best[1]] + [best[2]] + rest[best[1] :]
                improved = True
                break
    parts = [
        pieces[anchor_ids[o // 2]][::-1] if o % 2 else pieces[anchor_ids[o // 2]]
        for o in chain
    ]
    base = np.concatenate(parts)

    if crumb_ids:
        from scipy.spatial import cKDTree

        kd = cKDTree(metric.kd_embed(pos[base]))
        inserts: list[tuple[int, int, np.ndarray]] = []
        for j, cid in enumerate(crumb_ids):
            q = metric.kd_embed(pos[pieces[cid][0]][None, :])[0]
            _, at = kd.query(q, k=1, p=metric.kd_p)
            inserts.append((int(at), j, pieces[cid]))
        inserts.sort(key=lambda t: (t[0], t[1]))
        out: list[np.ndarray] = []
        prev = 0
        for at, _, crumb in inserts:
            out.append(base[prev : at + 1])
            out.append(crumb)
            prev = at + 1
        out.append(base[prev:])
        base = np.concatenate(out)
    return base


# ---------------------------------------------------------------------------
# Partition containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Region:
    id: int
    atom_ids: np.ndarray
    measure: float
    nucleus: tuple[int, int] | None
    inner_center: int
    inner_radius: float
    outer_center: int
    outer_radius: float


@dataclass(frozen=True)
class PartitionParams:
    N: int
    mode: str
    delta: float
    d: float
    n: int
    m: int
    k_step: int
    M: float
    c3: float
    c4: float
    quantization_tol: float
    c1_hat: float
    c2_hat: float
    a0_hat: float
    a1_hat: float


@dataclass(frozen=True)
class NodeLedger:
    """Per-node bookkeeping of the equal-measure construction."""

    node: int
    parent: int
    is_leaf: bool
    is_root: bool
    region_quota: int
    mass_cell: float
    mass_with_remainders: float
    mass_remainder: float
    mass_envelope: float


@dataclass(eq=False)
class Partition:
    space: AtomizedSpace
    N: int
    params: PartitionParams
    regions: list[Region]
    label: np.ndarray
    node_ledger: list[NodeLedger] = field(default_factory=list)

    @property
    def kind(self) -> str:
        return self.params.mode

    def measures(self) -> np.ndarray:
        return np.asarray([r.measure for r in self.regions])


# ---------------------------------------------------------------------------
# Quasi-equal partition (no connectivity needed)
# ---------------------------------------------------------------------------


def quasi_equal_partition(
    space: AtomizedSpace, tree: CubeTree, N: int, probe: RegularityReport | None = None
) -> Partition:
    """Split the space into N regions, each a union of fine cells inside one
    coarse cell: masses are merely comparable, but every region sits inside a
    ball of radius c3*N^(-1/d) and contains a ball of radius c4*N^(-1/d)."""
    if N < 1:
        raise ValueError("N must be positive")
    if N >= tree.cube_count(tree.k_max):
        raise ResolutionTooCoarseError(
            f"N={N} reaches the finest-generation cell count "
            f"{tree.cube_count(tree.k_max)}; build a deeper tree"
        )
    if probe is None:
        probe = default_regularity_probe(space, exponent=space.d_hint, full_range=True)
    n = tree.k_min
    for k in tree.generations:
        if tree.cube_count(k) <= N:
            n = k
    m = n + 1
    counts = np.bincount(tree.parent_index[m], minlength=tree.cube_count(n))
    total = int(counts.sum())

    # region quotas per coarse cell: at least one, at most the subcell count
    ideal = counts * (N / total)
    quota = np.clip(np.floor(ideal).astype(np.int64), 1, counts)
    while quota.sum() < N:
        room = quota < counts
        frac = np.where(room, ideal - quota, -np.inf)
        quota[int(np.argmax(frac))] += 1
    while quota.sum() > N:
        room = quota > 1
        over = np.where(room, quota - ideal, -np.inf)
        quota[int(np.argmax(over))] -= 1

    d = space.d_hint
    delta = tree.delta
    a0, a1, c1, c2 = tree.a0_hat, tree.a1_hat, probe.c1_hat, probe.c2_hat
    params = PartitionParams(
        N=N,
        mode="quasi",
        delta=delta,
        d=d,
        n=n,
        m=m,
        k_step=1,
        M=(c2 * a1**d) / (c1 * a0**d * delta**d),  # mass spread bound H
        c3=(a1 / (delta * a0)) * (1.0 / c1) ** (1.0 / d),
        c4=(a0 * delta / a1) * (1.0 / c2) ** (1.0 / d),
        quantization_tol=space.max_weight,
        c1_hat=c1,
        c2_hat=c2,
        a0_hat=a0,
        a1_hat=a1,
    )

    label = np.full(space.atom_count, -1, dtype=np.int64)
    regions: list[Region] = []
    for alpha in range(tree.cube_count(n)):
        subs = np.nonzero(tree.parent_index[m] == alpha)[0]
        for chunk in np.array_split(subs, quota[alpha]):
            nucleus = int(chunk[0])
            atoms = np.sort(np.concatenate([tree.cube_atoms(m, i) for i in chunk]))
            rid = len(regions)
            label[atoms] = rid
            z_out = int(tree.center_ids[n][alpha])
            outer = float(
                space.metric.pairwise(
                    space.positions[z_out][None, :], space.positions[atoms]
                ).max()
            )
            regions.append(
                Region(
                    id=rid,
                    atom_ids=atoms,
                    measure=float(space.weights[atoms].sum()),
                    nucleus=(m, nucleus),
                    inner_center=int(tree.center_ids[m][nucleus]),
                    inner_radius=float(tree.inner_radii[m][nucleus]),
                    outer_center=z_out,
                    outer_radius=outer,
                )
            )
    return Partition(space=space, N=N, params=params, regions=regions, label=label)


# ---------------------------------------------------------------------------
# Equal-measure partition
# ---------------------------------------------------------------------------


def _pick_working_generation(t: float, a0: float, delta: float) -> int:
    # unique n with a0*delta^(n+1) < t <= a0*delta^n
    n = int(math.floor(math.log(t / a0) / math.log(delta)))
    while a0 * delta**n < t:
        n -= 1
    while a0 * delta ** (n + 1) >= t:
        n += 1
    return n


def equal_measure_partition(
    space: AtomizedSpace, tree: CubeTree, N: int, probe: RegularityReport | None = None
) -> Partition:
    """Partition into exactly N regions of mass 1/N (within atom weight).

    Requires the working-scale overlap graph to be connected; each region is
    contained in a ball of radius c3*N^(-1/d) and contains the atom ball of
    radius c4*N^(-1/d) around its nucleus center.
    """
    if probe is None:
        probe = default_regularity_probe(space, exponent=space.d_hint, full_range=True)
    c1, c2 = probe.c1_hat, probe.c2_hat
    d = space.d_hint
    delta = tree.delta
    a0, a1 = tree.a0_hat, tree.a1_hat
    w = space.weights

    N_floor = 2.0 / (c1 * delta**d * space.diam**d)
    if N < N_floor * (1.0 - 1e-9):
        raise ValueError(
            f"N={N} below the admissible minimum {N_floor:.2f} for this space/delta"
        )
    t_scale = (2.0 / (c1 * N)) ** (1.0 / d)
    n = _pick_working_generation(t_scale, a0, delta)
    if n < tree.k_min:
        raise ValueError(
            f"working generation {n} is coarser than the tree range "
            f"{tree.k_min}..{tree.k_max}; rebuild with a lower k_min"
        )
    if n >= tree.k_max:
        raise ResolutionTooCoarseError(
            f"working generation {n} leaves no room for nuclei below it "
            f"(tree range {tree.k_min}..{tree.k_max})"
        )

    pairs = neighbor_pairs(tree, n)
    graph = OverlapGraph(tree.cube_count(n), pairs)
    cpos_n = space.positions[tree.center_ids[n]]
    weights_n = (
        space.metric.rowwise(cpos_n[pairs[:, 0]], cpos_n[pairs[:, 1]])
        if len(pairs)
        else np.empty(0)
    )
    rooted = spanning_tree_rooted(graph, weights_n)
    children = rooted.children()

    mu_n = tree.measures[n]
    if float(mu_n.min()) < (2.0 / N) * (1.0 - 1e-9):
        raise ConstructionDegenerateError(
            f"a working-scale cell has mass {mu_n.min():.3g} < 2/N; "
            "the fitted regularity constants are inconsistent at this N"
        )

    # measured node envelopes: cell plus its tree children, always inside the
    # ball of radius 3*a1*delta^n around the node center
    envelope = mu_n.copy()
    for beta, kids in enumerate(children):
        for c in kids:
            envelope[beta] += mu_n[c]
    M = float(N * envelope.max())

    tol = space.max_weight
    if tol > 1.0 / (10.0 * M * N):
        raise ResolutionTooCoarseError(
            f"max atom weight {tol:.3g} exceeds 1/(10*M*N) = {1.0 / (10 * M * N):.3g}; "
            "increase the atom count"
        )

    k_step = 0
    for k in range(n + 1, tree.k_max + 1):
        if float(tree.measures[k].max()) <= 1.0 / (M * N):
            k_step = k - n
            break
    if k_step == 0:
        raise ResolutionTooCoarseError(
            f"no generation at or below {tree.k_max} has all cell masses "
            f"<= 1/(M*N) = {1.0 / (M * N):.3g}; build a deeper tree"
        )
    m = n + k_step

    params = PartitionParams(
        N=N,
        mode="equal",
        delta=delta,
        d=d,
        n=n,
        m=m,
        k_step=k_step,
        M=M,
        c3=(3.0 * a1 / (delta * a0)) * (2.0 / c1) ** (1.0 / d),
        c4=(2.0 / c1) ** (1.0 / d) * delta**k_step,
        quantization_tol=tol,
        c1_hat=c1,
        c2_hat=c2,
        a0_hat=a0,
        a1_hat=a1,
    )

    m_labels = tree.labels[m]
    m_atom_counts = np.bincount(m_labels, minlength=tree.cube_count(m))
    m_centers = tree.center_ids[m]
    n_centers = tree.center_ids[n]
    metric = space.metric
    target = 1.0 / N

    label = np.full(space.atom_count, -1, dtype=np.int64)
    regions: list[Region] = []
    ledger: list[NodeLedger] = []
    remainders: dict[int, np.ndarray] = {}
    quotas = np.zeros(graph.n_vertices, dtype=np.int64)
    used_nuclei: set[int] = set()

    sweep = sweep_rank(space)

    def node_stream(beta: int, skip: np.ndarray,
                    blocks: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
        """Atoms of cell beta (minus ``skip``) along the space's sweep
        order, with incoming remainder blocks spliced in next to the stream
        atom nearest their source.

        Consecutive stream atoms are spatially close at every scale, so any
        run of prescribed mass is a compact chunk of the node.
        """
        atoms = tree.cube_atoms(n, beta)
        atoms = atoms[~skip[atoms]]
        stream = _rechain_pieces(space, sweep, atoms[np.argsort(sweep[atoms], kind="stable")])
        for rep, block in blocks:
            block = block[np.argsort(sweep[block], kind="stable")]
            d = metric.pairwise(rep[None, :], space.positions[stream])[0]
            at = int(np.argmin(d))
            stream = np.concatenate([stream[:at], block, stream[at:]])
        return stream

    def cut_regions(beta: int, stream: np.ndarray, quota: int, is_root: bool) -> None:
        """Cut the stream into ``quota`` consecutive runs of mass ~1/N and
        register each run (with a whole fine cell inside it) as a region."""
        masses = w[stream]
        cum = np.cumsum(masses)
        total = float(cum[-1])
        slack = _REL_SLACK * max(1.0, total)
        start = 0
        carry = 0.0
        for j in range(quota):
            if j == quota - 1:
                stop = len(stream)
            else:
                if is_root:
                    want = (total - (cum[start - 1] if start else 0.0)) / (quota - j)
                else:
                    want = target + carry
                base = cum[start - 1] if start else 0.0
                stop = int(np.searchsorted(cum, base + want + slack, side="right"))
                stop = max(stop, start + 1)
            run = stream[start:stop]
            got = float(w[run].sum())
            carry += target - got
            # the nucleus is the first whole fine cell inside the run
            run_labels = m_labels[run]
            counts = np.bincount(run_labels, minlength=tree.cube_count(m))
            whole = np.nonzero((counts > 0) & (counts == m_atom_counts))[0]
            if len(whole) == 0:
                raise ResolutionTooCoarseError(
                    f"a region in cell {beta} contains no whole fine cell; "
                    "the quantization margin is too thin"
                )
            whole_mask = np.zeros(tree.cube_count(m), dtype=bool)
            whole_mask[whole] = True
            nucleus = int(run_labels[np.argmax(whole_mask[run_labels])])
            if nucleus in used_nuclei:
                raise ConstructionDegenerateError("nucleus reused across regions")
            used_nuclei.add(nucleus)
            rid = len(regions)
            label[run] = rid
            regions.append(
                Region(
                    id=rid,
                    atom_ids=np.sort(run),
                    measure=got,
                    nucleus=(m, nucleus),
                    inner_center=int(m_centers[nucleus]),
                    inner_radius=float(tree.inner_radii[m][nucleus]),
                    outer_center=int(n_centers[beta]),
                    outer_radius=0.0,  # filled in afterwards
                )
            )
            start = stop

    for beta in rooted.processing_order:
        beta = int(beta)
        is_root = beta == rooted.root
        is_leaf = len(children[beta]) == 0 and not is_root
        q_atoms = tree.cube_atoms(n, beta)
        mu_Q = float(w[q_atoms].sum())
        kid_W = {c: remainders.pop(c) for c in children[beta]}
        mu_X = mu_Q + float(sum(w[part].sum() for part in kid_W.values()))

        if is_root:
            quota = int(N - quotas.sum())
            if quota < 1:
                raise ConstructionDegenerateError("root region quota is not positive")
            mu_W = 0.0
            W_pre = np.empty(0, dtype=np.int64)
        else:
            quota = int(math.floor(mu_X * N + 1e-9))
            # the remainder is carved out first as a round cap around the
            # boundary point facing the parent, so the mass handed upward is
            # a compact blob at the shared boundary (a cap around the parent
            # CENTER would be a thin equidistant band along the whole
            # boundary) and stays inside this node's own cell
            w_target = mu_X - quota * target
            parent_pos = space.positions[n_centers[rooted.parent[beta]]][None, :]
            d_parent = metric.pairwise(parent_pos, space.positions[q_atoms])[0]
            gate = int(q_atoms[np.argmin(d_parent)])
            W_pre = extract_subset(
                space, tree, q_atoms, w_target, around=gate, k_start=n
            )
            mu_W = float(w[W_pre].sum())
            if mu_W >= target + 10.0 * tol:
                raise ConstructionDegenerateError(
                    f"remainder of node {beta} weighs {mu_W:.3g} >= 1/N + tolerance"
                )
            remainders[beta] = W_pre
        quotas[beta] = quota

        skip = np.zeros(space.atom_count, dtype=bool)
        skip[W_pre] = True
        blocks = []
        own_center = space.positions[n_centers[beta]][None, :]
        for c in sorted(kid_W):
            atoms = kid_W[c]
            if len(atoms):
                # splice the incoming blob at its own boundary-facing point
                d = metric.pairwise(own_center, space.positions[atoms])[0]
                blocks.append((space.positions[atoms[int(np.argmin(d))]], atoms))
        stream = node_stream(beta, skip, blocks)
        cut_regions(beta, stream, quota, is_root)

        ledger.append(
            NodeLedger(
                node=beta,
                parent=int(rooted.parent[beta]),
                is_leaf=is_leaf,
                is_root=is_root,
                region_quota=quota,
                mass_cell=mu_Q,
                mass_with_remainders=mu_X,
                mass_remainder=mu_W,
                mass_envelope=float(envelope[beta]),
            )
        )

    if any(len(v) for v in remainders.values()):
        raise ConstructionDegenerateError("some node remainders were never consumed")
    if label.min() < 0:
        raise ConstructionDegenerateError("construction left atoms unassigned")
    if int(quotas.sum()) != N:
        raise ConstructionDegenerateError("region quotas do not sum to N")

    # exact outer radii in one vectorized pass
    outer_centers = np.asarray([r.outer_center for r in regions], dtype=np.int64)
    d_own = metric.rowwise(space.positions, space.positions[outer_centers[label]])
    outer = np.zeros(len(regions))
    np.maximum.at(outer, label, d_own)
    regions = [
        Region(
            id=r.id,
            atom_ids=r.atom_ids,
            measure=r.measure,
            nucleus=r.nucleus,
            inner_center=r.inner_center,
            inner_radius=r.inner_radius,
            outer_center=r.outer_center,
            outer_radius=float(outer[r.id]),
        )
        for r in regions
    ]
    return Partition(
        space=space, N=N, params=params, regions=regions, label=label, node_ledger=ledger
    )


# ---------------------------------------------------------------------------
# Verification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PartitionReport:
    covers: bool
    disjoint: bool
    region_count_ok: bool
    max_measure_dev: float
    measure_spread: float
    max_outer_radius: float
    outer_bound: float
    outer_ok: bool
    inner_ball_ok: bool
    inner_bound: float
    ledger_ok: bool
    quota_total: int

    @property
    def all_ok(self) -> bool:
        return (
            self.covers
            and self.disjoint
            and self.region_count_ok
            and self.outer_ok
            and self.inner_ball_ok
            and self.ledger_ok
        )


def verify_partition(
    space: AtomizedSpace, partition: Partition, params: PartitionParams | None = None
) -> PartitionReport:
    """Re-derive the partition guarantees from raw atom sets."""
    if params is None:
        params = partition.params
    N = partition.N
    w = space.weights
    seen = np.zeros(space.atom_count, dtype=np.int64)
    measures = []
    max_outer = 0.0
    outer_ok = True
    inner_ok = True
    r_out = params.c3 * N ** (-1.0 / params.d)
    r_in = params.c4 * N ** (-1.0 / params.d)
    tree_query = space.kdtree()
    for r in partition.regions:
        np.add.at(seen, r.atom_ids, 1)
        measures.append(float(w[r.atom_ids].sum()))
        if len(r.atom_ids) == 0:
            continue
        z = space.positions[r.outer_center][None, :]
        d = space.metric.pairwise(z, space.positions[r.atom_ids])[0]
        max_outer = max(max_outer, float(d.max()))
        outer_ok &= float(d.max()) <= r_out * (1.0 + 1e-9)
        # the open atom ball of radius c4*N^(-1/d) around the nucleus center
        # must lie inside the region
        zi = space.positions[r.inner_center]
        ball = tree_query.query_ball_point(
            space.metric.kd_embed(zi[None, :])[0],
            float(space.metric.kd_radius(r_in)) * (1.0 + 1e-9),
            p=space.metric.kd_p,
        )
        ball = np.asarray(ball, dtype=np.int64)
        if len(ball):
            d_in = space.metric.pairwise(zi[None, :], space.positions[ball])[0]
            inside = ball[d_in < r_in]
            inner_ok &= bool(np.all(partition.label[inside] == r.id))
    measures_arr = np.asarray(measures)
    covers = bool(np.all(seen == 1))
    disjoint = bool(np.all(seen <= 1))
    count_ok = len(partition.regions) == N
    max_dev = float(np.abs(measures_arr - 1.0 / N).max())
    if measures_arr.min() > 0:
        spread = float(measures_arr.max() / measures_arr.min())
    else:
        spread = math.inf

    ledger_ok = True
    quota_total = 0
    if partition.node_ledger:
        for row in partition.node_ledger:
            quota_total += row.region_quota
            if not row.is_root:
                ledger_ok &= row.mass_remainder < 1.0 / N + 10.0 * params.quantization_tol
            ledger_ok &= row.mass_with_remainders <= params.M / N * (1.0 + 1e-9)
        ledger_ok &= quota_total == N
        nuclei = [r.nucleus for r in partition.regions]
        ledger_ok &= len(set(nuclei)) == len(nuclei)
    else:
        quota_total = N

    return PartitionReport(
        covers=covers,
        disjoint=disjoint,
        region_count_ok=count_ok,
        max_measure_dev=max_dev,
        measure_spread=spread,
        max_outer_radius=max_outer,
        outer_bound=r_out,
        outer_ok=outer_ok,
        inner_ball_ok=inner_ok,
        inner_bound=r_in,
        ledger_ok=ledger_ok,
        quota_total=quota_total,
    )


def region_diameters(space: AtomizedSpace, partition: Partition) -> np.ndarray:
    """Exact region diameters where a fast exact method exists, otherwise the
    certified bound 2 * outer_radius."""
    out = np.empty(len(partition.regions))
    metric_name = space.metric.name
    dim = space.positions.shape[1]
    for i, r in enumerate(partition.regions):
        P = space.positions[r.atom_ids]
        if metric_name == "euclidean" and dim == 1:
            out[i] = float(P.max() - P.min())
        elif metric_name == "chebyshev":
            out[i] = float((P.max(axis=0) - P.min(axis=0)).max())
        elif metric_name == "euclidean" and dim == 2:
            from scipy.spatial import ConvexHull, QhullError

            if len(P) <= 3:
                out[i] = float(space.metric.pairwise(P, P).max())
            else:
                try:
                    hull = P[ConvexHull(P).vertices]
                except QhullError:
                    hull = P  # degenerate (collinear) region
                out[i] = float(space.metric.pairwise(hull, hull).max())
        elif metric_name == "geodesic" and len(P) <= 20000:
            # the geodesic diameter is the monotone image of the chordal one
            from scipy.spatial.distance import cdist

            chord = float(cdist(P, P).max())
            out[i] = 2.0 * math.asin(min(1.0, chord / 2.0))
        elif len(P) <= 4096:
            out[i] = float(space.metric.pairwise(P, P).max())
        else:
            out[i] = 2.0 * r.outer_radius
    return out


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def partition_to_json(partition: Partition) -> dict:
    p = partition.params
    return {
        "N": partition.N,
        "params": {
            "mode": p.mode,
            "n": p.n,
            "m": p.m,
            "M": p.M,
            "c3": p.c3,
            "c4": p.c4,
            "delta": p.delta,
            "d": p.d,
            "quantization_tol": p.quantization_tol,
        },
        "regions": [
            {
                "id": r.id,
                "atom_ids": [int(a) for a in r.atom_ids],
                "measure": r.measure,
                "nucleus_center": r.inner_center,
                "inner_radius": r.inner_radius,
                "outer_center": r.outer_center,
                "outer_radius": r.outer_radius,
            }
            for r in partition.regions
        ],
    }


def partition_labels_csv(partition: Partition) -> str:
    lines = ["atom_id,region_id"]
    lines.extend(f"{i},{int(partition.label[i])}" for i in range(len(partition.label)))
    return "\n".join(lines) + "\n"
