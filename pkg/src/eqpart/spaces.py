"""Finite weighted atom clouds standing in for metric measure spaces.

An :class:`AtomizedSpace` is a list of weighted atoms together with an exact
metric on atom positions.  Builders quantize a reference measure into atoms of
roughly equal mass and normalize the total mass to 1, so set measures are exact
sums of atom weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import ConvexHull, cKDTree
from scipy.spatial.distance import cdist

from .errors import ResolutionTooCoarseError

GASKET_DIMENSION = math.log(3.0) / math.log(2.0)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


class EuclideanMetric:
    """Euclidean distance on R^dim."""

    name = "euclidean"
    kd_p = 2.0

    def pairwise(self, P: np.ndarray, Q: np.ndarray) -> np.ndarray:
        return cdist(np.atleast_2d(P), np.atleast_2d(Q))

    def rowwise(self, P: np.ndarray, Q: np.ndarray) -> np.ndarray:
        return np.linalg.norm(np.atleast_2d(P) - np.atleast_2d(Q), axis=1)

    def kd_embed(self, P: np.ndarray) -> np.ndarray:
        return P

    def kd_radius(self, r):
        return r


class ChebyshevMetric:
    """Max-coordinate (L-infinity) distance on R^dim."""

    name = "chebyshev"
    kd_p = np.inf

    def pairwise(self, P: np.ndarray, Q: np.ndarray) -> np.ndarray:
        return cdist(np.atleast_2d(P), np.atleast_2d(Q), metric="chebyshev")

    def rowwise(self, P: np.ndarray, Q: np.ndarray) -> np.ndarray:
        return np.abs(np.atleast_2d(P) - np.atleast_2d(Q)).max(axis=1)

    def kd_embed(self, P: np.ndarray) -> np.ndarray:
        return P

    def kd_radius(self, r):
        return r


class SphereGeodesicMetric:
    """Great-circle distance on the unit sphere.

    Uses atan2(|p x q|, <p, q>) rather than arccos<p, q>; the two agree
    mathematically but atan2 stays well conditioned near parallel and
    antipodal pairs.  All arithmetic is explicit elementwise numpy so that a
    pair's distance is bit-identical no matter which batch it was computed in
    (BLAS matmul rounding can depend on batch shape, which would break exact
    tie-breaking downstream).
    """

    name = "geodesic"
    kd_p = 2.0

    @staticmethod
    def _dist(px, py, pz, qx, qy, qz):
        dots = px * qx + py * qy + pz * qz
        cx = py * qz - pz * qy
        cy = pz * qx - px * qz
        cz = px * qy - py * qx
        sines = np.sqrt(cx * cx + cy * cy + cz * cz)
        return np.arctan2(sines, dots)

    def pairwise(self, P: np.ndarray, Q: np.ndarray) -> np.ndarray:
        P = np.atleast_2d(P)
        Q = np.atleast_2d(Q)
        return self._dist(
            P[:, 0, None], P[:, 1, None], P[:, 2, None],
            Q[None, :, 0], Q[None, :, 1], Q[None, :, 2],
        )

    def rowwise(self, P: np.ndarray, Q: np.ndarray) -> np.ndarray:
        P = np.atleast_2d(P)
        Q = np.atleast_2d(Q)
        return self._dist(P[:, 0], P[:, 1], P[:, 2], Q[:, 0], Q[:, 1], Q[:, 2])

    def kd_embed(self, P: np.ndarray) -> np.ndarray:
        return P

    def kd_radius(self, r):
        # geodesic ball of radius r == chordal ball of radius 2 sin(r/2)
        return 2.0 * np.sin(np.minimum(r, math.pi) / 2.0)


Metric = EuclideanMetric | ChebyshevMetric | SphereGeodesicMetric


# ---------------------------------------------------------------------------
# Atom cloud
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Atom:
    id: int
    position: np.ndarray
    weight: float


@dataclass(eq=False)
class AtomizedSpace:
    """A finite weighted point cloud with an exact metric.

    Attributes
    ----------
    kind : short builder tag ("interval", "square", "sphere", "gasket", "plus")
    positions : (n, dim) float64 coordinates
    weights : (n,) positive masses summing to 1
    metric : metric evaluator for positions
    d_hint : nominal dimension of the underlying space
    resolution : maximum atom cell radius h supplied by the builder
    diam : exact maximum pairwise atom distance
    seed : seed used by the builder, if any randomness was involved
    """

    kind: str
    positions: np.ndarray
    weights: np.ndarray
    metric: Metric
    d_hint: float
    resolution: float
    diam: float
    seed: int | None = None
    _kdtree: cKDTree | None = field(default=None, repr=False)
    _sweep_rank: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.ndim == 1:
            self.positions = self.positions[:, None]
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if len(self.weights) != len(self.positions):
            raise ValueError("positions and weights length mismatch")
        if not np.all(self.weights > 0):
            raise ValueError("atom weights must be positive")
        if self.diam <= 0:
            raise ValueError("diameter must be positive")

    # -- basic accessors ----------------------------------------------------

    @property
    def atom_count(self) -> int:
        return len(self.weights)

    @property
    def total_measure(self) -> float:
        return float(self.weights.sum())

    @property
    def max_weight(self) -> float:
        return float(self.weights.max())

    def atom(self, i: int) -> Atom:
        return Atom(int(i), self.positions[i].copy(), float(self.weights[i]))

    @property
    def atoms(self) -> list[Atom]:
        return [self.atom(i) for i in range(self.atom_count)]

    # -- distances ----------------------------------------------------------

    def dists_from(self, i: int) -> np.ndarray:
        """Distances from atom i to every atom."""
        return self.metric.pairwise(self.positions[i : i + 1], self.positions)[0]

    def dists_from_point(self, p: np.ndarray) -> np.ndarray:
        return self.metric.pairwise(np.asarray(p, dtype=np.float64)[None, :], self.positions)[0]

    def pair_distance(self, i: int, j: int) -> float:
        return float(
            self.metric.pairwise(self.positions[i : i + 1], self.positions[j : j + 1])[0, 0]
        )

    def kdtree(self) -> cKDTree:
        if self._kdtree is None:
            self._kdtree = cKDTree(self.metric.kd_embed(self.positions))
        return self._kdtree

    def ball_measure(self, center: int | np.ndarray, r: float) -> float:
        """Mass of the open ball B(center, r), exact over atoms."""
        if np.isscalar(center) or isinstance(center, (int, np.integer)):
            d = self.dists_from(int(center))
        else:
            d = self.dists_from_point(np.asarray(center))
        return float(self.weights[d < r].sum())


# ---------------------------------------------------------------------------
# Exact diameters
# ---------------------------------------------------------------------------


def _diameter_interval(x: np.ndarray) -> float:
    return float(x.max() - x.min())


def _diameter_euclidean_2d(P: np.ndarray) -> float:
    hull = ConvexHull(P)
    pts = P[hull.vertices]
    return float(cdist(pts, pts).max())


def _diameter_chebyshev(P: np.ndarray) -> float:
    # L-inf diameter of a finite set is the max coordinate range
    return float((P.max(axis=0) - P.min(axis=0)).max())


def _diameter_sphere(P: np.ndarray, metric: SphereGeodesicMetric) -> float:
    # the chord-maximizing pair (a, b) minimizes |(-a) - b|, so one nearest
    # neighbour query of all antipodes against the cloud finds it exactly
    tree = cKDTree(P)
    _, idx = tree.query(-P, k=1)
    chords = np.linalg.norm(P - P[idx], axis=1)
    i = int(np.argmax(chords))
    return float(metric.pairwise(P[i : i + 1], P[idx[i] : idx[i] + 1])[0, 0])


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def build_interval(atom_count: int) -> AtomizedSpace:
    """Unit interval quantized into equal cells, one atom per cell midpoint."""
    if atom_count < 2:
        raise ValueError("atom_count must be at least 2")
    n = int(atom_count)
    x = (np.arange(n) + 0.5) / n
    w = np.full(n, 1.0 / n)
    return AtomizedSpace(
        kind="interval",
        positions=x[:, None],
        weights=w,
        metric=EuclideanMetric(),
        d_hint=1.0,
        resolution=1.0 / (2 * n),
        diam=_diameter_interval(x),
    )


def build_square(side_atoms: int) -> AtomizedSpace:
    """Unit square on a side_atoms x side_atoms grid of cell midpoints."""
    if side_atoms < 3:
        raise ValueError("side_atoms must be at least 3")
    s = int(side_atoms)
    g = (np.arange(s) + 0.5) / s
    xx, yy = np.meshgrid(g, g, indexing="ij")
    P = np.column_stack([xx.ravel(), yy.ravel()])
    n = s * s
    w = np.full(n, 1.0 / n)
    corner = math.sqrt(2.0) * (s - 1) / s  # opposite cell midpoints
    return AtomizedSpace(
        kind="square",
        positions=P,
        weights=w,
        metric=EuclideanMetric(),
        d_hint=2.0,
        resolution=math.sqrt(2.0) / (2 * s),
        diam=corner,
    )


def build_sphere_s2(atom_count: int, seed: int = 0) -> AtomizedSpace:
    """Unit sphere S^2 sampled by a golden-angle spiral, equal weights.

    The seed only rotates the spiral in longitude; the point set is otherwise
    deterministic and low-discrepancy.
    """
    if atom_count < 8:
        raise ValueError("atom_count must be at least 8")
    n = int(atom_count)
    rng = np.random.default_rng(seed)
    offset = rng.uniform(0.0, 2.0 * math.pi)
    i = np.arange(n)
    z = 1.0 - (2.0 * i + 1.0) / n
    lon = i * math.pi * (3.0 - math.sqrt(5.0)) + offset
    rho = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    P = np.column_stack([rho * np.cos(lon), rho * np.sin(lon), z])
    w = np.full(n, 1.0 / n)
    metric = SphereGeodesicMetric()
    # cell radius of the equal-area cap: 2*pi*(1-cos h) = 4*pi/n
    h = math.acos(max(-1.0, 1.0 - 2.0 / n))
    return AtomizedSpace(
        kind="sphere",
        positions=P,
        weights=w,
        metric=metric,
        d_hint=2.0,
        resolution=h,
        diam=_diameter_sphere(P, metric),
        seed=seed,
    )


def build_gasket(level: int) -> AtomizedSpace:
    """Sierpinski gasket at a fixed subdivision level.

    Atoms sit at the centroids of the 3^level address cells, each carrying
    mass 3^-level of the natural self-similar measure; the ambient Euclidean
    metric is used (bi-Lipschitz to the intrinsic one on the gasket).
    """
    if level < 1:
        raise ValueError("level must be at least 1")
    L = int(level)
    n = 3**L
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, math.sqrt(3.0) / 2.0]])
    idx = np.arange(n)
    offset = np.zeros((n, 2))
    rem = idx.copy()
    for j in range(1, L + 1):
        digit = rem % 3
        rem = rem // 3
        offset += verts[digit] / 2.0**j
    centroid = verts.mean(axis=0)
    P = offset + centroid / 2.0**L
    w = np.full(n, 3.0**-L)
    return AtomizedSpace(
        kind="gasket",
        positions=P,
        weights=w,
        metric=EuclideanMetric(),
        d_hint=GASKET_DIMENSION,
        resolution=(1.0 / math.sqrt(3.0)) * 2.0**-L,  # cell circumradius
        diam=_diameter_euclidean_2d(P),
    )


def build_plus_sign(atom_count: int) -> AtomizedSpace:
    """Two crossing unit segments {xy=0, |x|<=1, |y|<=1} with the max metric.

    The natural length measure is quantized uniformly along each arm.  This
    space is the standard example where Voronoi cells of distinct sites can
    share a whole segment of positive mass.
    """
    if atom_count < 8:
        raise ValueError("atom_count must be at least 8")
    n = int(atom_count)
    n_h = (n + 1) // 2
    n_v = n - n_h
    if n_h % 2 == 1 and n_v % 2 == 1:
        # avoid coincident atoms at the origin from both arms
        n_h += 1
        n_v -= 1
    xs = -1.0 + (2.0 * np.arange(n_h) + 1.0) / n_h
    ys = -1.0 + (2.0 * np.arange(n_v) + 1.0) / n_v
    P = np.vstack(
        [
            np.column_stack([xs, np.zeros(n_h)]),
            np.column_stack([np.zeros(n_v), ys]),
        ]
    )
    w = np.concatenate([np.full(n_h, 0.5 / n_h), np.full(n_v, 0.5 / n_v)])
    return AtomizedSpace(
        kind="plus",
        positions=P,
        weights=w,
        metric=ChebyshevMetric(),
        d_hint=1.0,
        resolution=max(1.0 / n_h, 1.0 / n_v),
        diam=_diameter_chebyshev(P),
    )


def build_space(kind: str, *, atoms: int = 4096, level: int = 7, seed: int = 0) -> AtomizedSpace:
    """Dispatch helper used by the command line front end."""
    if kind == "interval":
        return build_interval(atoms)
    if kind == "square":
        return build_square(atoms)
    if kind == "sphere":
        return build_sphere_s2(atoms, seed)
    if kind == "gasket":
        return build_gasket(level)
    if kind == "plus":
        return build_plus_sign(atoms)
    raise ValueError(f"unknown space kind: {kind!r}")


# ---------------------------------------------------------------------------
# Locality-preserving sweep order
# ---------------------------------------------------------------------------


def _hilbert_rank_2d(xy: np.ndarray, order: int = 16) -> np.ndarray:
    """Hilbert-curve index of points scaled to [0, 1)^2 (vectorized)."""
    n = np.int64(1) << order
    x = np.clip((xy[:, 0] * n).astype(np.int64), 0, n - 1)
    y = np.clip((xy[:, 1] * n).astype(np.int64), 0, n - 1)
    d = np.zeros(len(xy), dtype=np.int64)
    s = n >> 1
    while s > 0:
        rx = ((x & s) > 0).astype(np.int64)
        ry = ((y & s) > 0).astype(np.int64)
        d += s * s * ((3 * rx) ^ ry)
        # rotate the quadrant frame
        flip = (ry == 0) & (rx == 1)
        x_f = np.where(flip, s - 1 - x, x)
        y_f = np.where(flip, s - 1 - y, y)
        swap = ry == 0
        x, y = np.where(swap, y_f, x_f), np.where(swap, x_f, y_f)
        s >>= 1
    return d


def _arrowhead_rank(atom_count: int) -> np.ndarray:
    """Sierpinski arrowhead traversal rank for gasket cells.

    Cell ids encode ternary corner addresses (coarsest digit least
    significant, matching the gasket builder); the arrowhead curve visits,
    inside a triangle walked from corner `cin` to corner `cout`, the
    subtriangles at cin, at the third corner, and at cout, entering and
    leaving each at shared midpoints.  Consecutive cells therefore touch.
    """
    n = atom_count
    levels = round(math.log(n, 3))
    idx = np.arange(n)
    rank = np.zeros(n, dtype=np.int64)
    cin = np.zeros(n, dtype=np.int64)
    cout = np.ones(n, dtype=np.int64)
    rem = idx.copy()
    for _ in range(levels):
        digit = rem % 3
        rem = rem // 3
        third = 3 - cin - cout
        p = np.where(digit == cin, 0, np.where(digit == third, 1, 2))
        rank = rank * 3 + p
        cin, cout = (
            np.where(p == 2, third, cin),
            np.where(p == 0, third, cout),
        )
    return rank


def sweep_rank(space: AtomizedSpace) -> np.ndarray:
    """Rank of each atom along a locality-preserving sweep of the space.

    Any run of consecutive ranks carrying mass w is a spatially compact
    chunk with diameter on the order of w^(1/d); the mass-balanced region
    cuts rely on this.  Euclidean planar clouds use a Hilbert curve on the
    bounding box, the sphere a Hilbert curve on the equal-area
    (longitude, z) chart, one-dimensional clouds their coordinate, and the
    cross its arm-arc order.  Deterministic and cached per space.
    """
    cached = getattr(space, "_sweep_rank", None)
    if cached is not None:
        return cached
    P = space.positions
    if space.kind == "plus":
        on_h = P[:, 1] == 0.0
        key = np.where(on_h, P[:, 0], 10.0 + P[:, 1])
    elif space.kind == "gasket":
        key = _arrowhead_rank(space.atom_count)
    elif isinstance(space.metric, SphereGeodesicMetric):
        # equirectangular chart split into two geodesically square halves,
        # traversed as one continuous loop (second half runs backward and
        # mirrored so the curves meet at the shared meridian)
        lon = (np.arctan2(P[:, 1], P[:, 0]) + math.pi) / (2.0 * math.pi)
        lat = (np.arcsin(np.clip(P[:, 2], -1.0, 1.0)) + math.pi / 2.0) / math.pi
        west = lon < 0.5
        u = np.where(west, 2.0 * lon, 2.0 - 2.0 * lon)
        h = _hilbert_rank_2d(np.column_stack([u, lat]))
        h_span = np.int64(1) << 32
        key = np.where(west, h, 2 * h_span - 1 - h)
    elif P.shape[1] == 1:
        key = P[:, 0]
    elif P.shape[1] == 2:
        lo = P.min(axis=0)
        span = float((P.max(axis=0) - lo).max()) or 1.0
        key = _hilbert_rank_2d((P - lo) / (span * (1.0 + 1e-9)))
    else:
        raise ValueError(f"no sweep order for {space.kind!r} in dim {P.shape[1]}")
    order = np.lexsort((np.arange(space.atom_count), key))
    rank = np.empty(space.atom_count, dtype=np.int64)
    rank[order] = np.arange(space.atom_count)
    space._sweep_rank = rank
    return rank


# ---------------------------------------------------------------------------
# Regularity probe
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegularityReport:
    """Fitted ball-growth law mu(B(x, r)) ~ r^d_fit over sampled centers.

    c1_hat and c2_hat bracket mu(B)/r^exponent over all probed
    (center, radius) samples, so the bracketing holds by construction at the
    probed scales.  By default the exponent is the fitted slope d_fit; pass
    ``exponent`` to bracket at a nominal dimension instead (small-sample bias
    in the fitted slope would otherwise leak into every derived constant).
    """

    d_fit: float
    c1_hat: float
    c2_hat: float
    r_min: float
    r_max: float
    sample_count: int
    exponent: float


def regularity_probe(
    space: AtomizedSpace,
    sample_centers: Sequence[int],
    radii: Sequence[float],
    exponent: float | None = None,
) -> RegularityReport:
    """Fit the ball-measure growth exponent and its constants.

    Radii must lie in (4h, diam] where h is the space resolution; centers are
    atom ids.
    """
    centers = np.asarray(list(sample_centers), dtype=np.int64)
    radii_arr = np.asarray(sorted(float(r) for r in radii))
    if len(centers) == 0:
        raise ValueError("sample_centers must be nonempty")
    if len(radii_arr) == 0:
        raise ValueError("radii must be nonempty")
    floor_r = 4.0 * space.resolution
    if np.all(radii_arr <= floor_r):
        raise ResolutionTooCoarseError(
            f"all probe radii are at or below 4h = {floor_r:.3g}; "
            "increase the atom count or the radii"
        )
    if np.any(radii_arr <= floor_r) or np.any(radii_arr > space.diam * (1 + 1e-12)):
        raise ValueError(f"radii must lie in (4h, diam] = ({floor_r:.3g}, {space.diam:.3g}]")

    log_r, log_mu, mus = [], [], []
    for c in centers:
        d = space.dists_from(int(c))
        for r in radii_arr:
            mu = float(space.weights[d < r].sum())
            log_r.append(math.log(r))
            log_mu.append(math.log(mu))
            mus.append((mu, r))
    slope, _ = np.polyfit(np.asarray(log_r), np.asarray(log_mu), 1)
    d_fit = float(slope)
    expo = d_fit if exponent is None else float(exponent)
    ratios = np.asarray([mu / r**expo for mu, r in mus])
    return RegularityReport(
        d_fit=d_fit,
        c1_hat=float(ratios.min()),
        c2_hat=float(ratios.max()),
        r_min=float(radii_arr[0]),
        r_max=float(radii_arr[-1]),
        sample_count=len(mus),
        exponent=expo,
    )


def default_regularity_probe(
    space: AtomizedSpace,
    n_centers: int = 64,
    n_radii: int = 8,
    exponent: float | None = None,
    full_range: bool = False,
) -> RegularityReport:
    """Deterministic probe with id-strided centers.

    Mid-scale radii (up to diam/2) give the cleanest dimension fit; with
    ``full_range`` the radii extend to the diameter, where the ball-growth
    lower constant of a bounded space is actually attained, which is what
    the partition formulas need.
    """
    n = space.atom_count
    stride = max(1, n // n_centers)
    centers = np.arange(0, n, stride)[:n_centers]
    lo = max(4.0 * space.resolution * 1.5, space.diam / 64.0)
    hi = space.diam if full_range else space.diam / 2.0
    if lo >= hi:
        lo = hi / 4.0
    if lo <= 4.0 * space.resolution:
        raise ResolutionTooCoarseError("space too coarse for a default probe")
    radii = np.geomspace(lo, hi, n_radii)
    return regularity_probe(space, centers, radii, exponent=exponent)


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def space_to_json(space: AtomizedSpace) -> dict:
    return {
        "kind": space.kind,
        "atom_count": space.atom_count,
        "d_hint": space.d_hint,
        "atoms": [
            {"id": i, "pos": [float(v) for v in space.positions[i]], "w": float(space.weights[i])}
            for i in range(space.atom_count)
        ],
    }
