"""Nested spatial partitions of the degrees of freedom and the distances between cells.

Cells are stored level by level in flat numpy arrays.  Level 0 is the virtual
root holding every point; levels ``1..q`` are the actual partitions.  Every
cell also carries the axis-aligned bounding box of its member points, which is
what the bulk distance kernels (:func:`box_gap`) work with.  For cells of a
regular grid the box gap coincides with the minimum pairwise point distance;
for general partitions it is a lower bound of it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree


@dataclass(frozen=True)
class PointSet:
    coords: np.ndarray
    periodic: bool = False

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float)
        if coords.ndim == 1:
            coords = coords[:, None]
        if coords.ndim != 2 or coords.shape[0] < 1:
            raise ValueError("coords must be an (N, d) array with N >= 1")
        if coords.shape[1] not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {coords.shape[1]}")
        if np.any(coords < 0.0) or np.any(coords >= 1.0):
            raise ValueError("all coordinates must lie in [0, 1)^d")
        object.__setattr__(self, "coords", coords)

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def dim(self) -> int:
        return self.coords.shape[1]


@dataclass(frozen=True)
class Cell:
    id: int
    level: int
    parent: int | None
    children: np.ndarray
    members: np.ndarray
    center: np.ndarray
    radius: float


@dataclass
class PartitionTree:
    """Nested partitions ``tau^(0) = {root}, tau^(1), ..., tau^(q)``.

    ``labels[k][p]`` is the level-k cell containing point ``p`` and
    ``parents[k][c]`` the level-(k-1) cell containing level-k cell ``c``.
    """

    points: PointSet
    h: float
    labels: list[np.ndarray]
    parents: list[np.ndarray]
    centers: list[np.ndarray]
    radii: list[np.ndarray]
    lo: list[np.ndarray] = field(init=False)
    hi: list[np.ndarray] = field(init=False)
    _members: list[tuple[np.ndarray, np.ndarray]] = field(init=False, repr=False)

    def __post_init__(self):
        self.lo, self.hi, self._members = [], [], []
        coords = self.points.coords
        for lab in self.labels:
            ncell = int(lab.max()) + 1
            order = np.argsort(lab, kind="stable")
            ptr = np.zeros(ncell + 1, dtype=np.int64)
            np.cumsum(np.bincount(lab, minlength=ncell), out=ptr[1:])
            self._members.append((ptr, order))
            lo = np.full((ncell, coords.shape[1]), np.inf)
            hi = np.full((ncell, coords.shape[1]), -np.inf)
            np.minimum.at(lo, lab, coords)
            np.maximum.at(hi, lab, coords)
            self.lo.append(lo)
            self.hi.append(hi)

    @property
    def q(self) -> int:
        return len(self.labels) - 1

    @property
    def n(self) -> int:
        return self.points.n

    @property
    def periodic(self) -> bool:
        return self.points.periodic

    def num_cells(self, level: int) -> int:
        return len(self.parents[level])

    def members(self, level: int, cell: int) -> np.ndarray:
        ptr, order = self._members[level]
        return order[ptr[cell]:ptr[cell + 1]]

    def sizes(self, level: int) -> np.ndarray:
        ptr, _ = self._members[level]
        return np.diff(ptr)

    def children(self, level: int, cell: int) -> np.ndarray:
        """Ids of the level-(level+1) cells inside ``cell``."""
        return np.flatnonzero(self.parents[level + 1] == cell)

    def cell(self, level: int, cell: int) -> Cell:
        parent = None if level == 0 else int(self.parents[level][cell])
        children = self.children(level, cell) if level < self.q else np.empty(0, dtype=np.int64)
        return Cell(cell, level, parent, children, self.members(level, cell),
                    self.centers[level][cell], float(self.radii[level][cell]))

    def box(self, level: int, cells) -> tuple[np.ndarray, np.ndarray]:
        return self.lo[level][cells], self.hi[level][cells]

    def check(self, slack: float = 0.5) -> None:
        """Raise AssertionError if nesting, cover or size bounds are violated."""
        n = self.n
        assert np.all(self.labels[0] == 0)
        for k in range(1, self.q + 1):
            lab, par = self.labels[k], self.parents[k]
            assert lab.shape == (n,)
            assert np.all(self.sizes(k) > 0), f"empty cell on level {k}"
            # nesting: the parent of a point's level-k cell is its level-(k-1) cell
            assert np.array_equal(par[lab], self.labels[k - 1]), f"nesting broken on level {k}"
            d = torus_distance(self.points.coords, self.centers[k][lab], self.periodic)
            assert np.all(d <= self.radii[k][lab] + 1e-12)
            assert np.all(self.radii[k] <= self.h ** k * (1.0 + slack) + 1e-12), f"oversized cell on level {k}"


def _center_radius(coords, labels, ncell, periodic):
    counts = np.bincount(labels, minlength=ncell)
    centers = np.stack([np.bincount(labels, weights=coords[:, a], minlength=ncell)
                        for a in range(coords.shape[1])], axis=1) / counts[:, None]
    d = torus_distance(coords, centers[labels], periodic)
    radii = np.zeros(ncell)
    np.maximum.at(radii, labels, d)
    return centers, radii


def torus_distance(a: np.ndarray, b: np.ndarray, periodic: bool) -> np.ndarray:
    """Row-wise Euclidean distance, optionally wrapped on the unit torus."""
    diff = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))
    if periodic:
        diff = np.minimum(diff, 1.0 - diff)
    return np.sqrt(np.sum(diff * diff, axis=-1))


def box_gap(lo_a, hi_a, lo_b, hi_b, periodic: bool) -> np.ndarray:
    """Distance between axis-aligned boxes, broadcasting over leading axes.

    Boxes are given by per-axis extents ``[lo, hi]`` of their member points.
    On the torus each axis gap is minimised over the three relevant shifts.
    """
    g = np.maximum(0.0, np.maximum(lo_b - hi_a, lo_a - hi_b))
    if periodic:
        g = np.minimum(g, np.maximum(0.0, np.maximum(lo_b + 1.0 - hi_a, lo_a - hi_b - 1.0)))
        g = np.minimum(g, np.maximum(0.0, np.maximum(lo_b - 1.0 - hi_a, lo_a - hi_b + 1.0)))
    return np.sqrt(np.sum(g * g, axis=-1))


def cell_distance(points: PointSet, a, b, periodic: bool | None = None) -> float:
    """Minimum distance between two sets of member points (given by index)."""
    a = np.atleast_1d(np.asarray(a))
    b = np.atleast_1d(np.asarray(b))
    if a.size == 0 or b.size == 0:
        raise ValueError("cell_distance needs non-empty point sets")
    periodic = points.periodic if periodic is None else periodic
    pa, pb = points.coords[a], points.coords[b]
    if len(pa) * len(pb) <= 4096:
        return float(torus_distance(pa[:, None, :], pb[None, :, :], periodic).min())
    tree = cKDTree(pb, boxsize=1.0 if periodic else None)
    dist, _ = tree.query(pa, k=1)
    return float(dist.min())


def regular_grid_points(n: int, dim: int, periodic: bool = True) -> PointSet:
    """Points ``i/n`` of the ``n^dim`` grid, flattened in C order."""
    axes = np.meshgrid(*([np.arange(n) / n] * dim), indexing="ij")
    return PointSet(np.stack([a.ravel() for a in axes], axis=1), periodic)


def build_regular_partition(grid_dims, periodic: bool = True) -> PartitionTree:
    """Dyadic quadtree/octree over an ``n^d`` grid with ``h = 1/2`` and ``q = log2 n``."""
    dims = [int(g) for g in np.atleast_1d(grid_dims)]
    if not 1 <= len(dims) <= 3:
        raise ValueError("grid must have 1, 2 or 3 axes")
    for axis, g in enumerate(dims):
        if g < 2 or g & (g - 1):
            raise ValueError(f"grid axis {axis} has size {g}, which is not a power of two >= 2")
        if g != dims[0]:
            raise ValueError(f"grid axis {axis} has size {g}, expected {dims[0]} like axis 0")
    n, dim = dims[0], len(dims)
    q = n.bit_length() - 1
    points = regular_grid_points(n, dim, periodic)
    idx = np.stack(np.unravel_index(np.arange(n ** dim), (n,) * dim), axis=1)

    labels, parents, centers, radii = [], [], [], []
    for k in range(q + 1):
        m = 2 ** k
        sub = idx >> (q - k)
        lab = np.ravel_multi_index(tuple(sub.T), (m,) * dim) if k else np.zeros(n ** dim, dtype=np.int64)
        if k == 0:
            par = np.array([-1])
        else:
            csub = np.stack(np.unravel_index(np.arange(m ** dim), (m,) * dim), axis=1)
            par = np.ravel_multi_index(tuple((csub >> 1).T), (m // 2,) * dim)
        c, r = _center_radius(points.coords, lab, m ** dim, False)
        labels.append(lab.astype(np.int64))
        parents.append(np.asarray(par, dtype=np.int64))
        centers.append(c)
        radii.append(r)
    return PartitionTree(points, 0.5, labels, parents, centers, radii)


def farthest_first(coords: np.ndarray, periodic: bool, stop_radius: float = 0.0):
    """Greedy farthest-point ordering starting from point 0.

    Returns ``(order, radii, nearest)``: the selected points, the distance of
    each to the previously selected ones at insertion time (``inf`` for the
    first), and for every input point the earliest-selected nearest center.
    Selection stops once the covering radius drops to ``stop_radius`` or below.
    """
    n = len(coords)
    dist = torus_distance(coords, coords[0], periodic)
    nearest = np.zeros(n, dtype=np.int64)
    order, radii = [0], [np.inf]
    while len(order) < n:
        j = int(np.argmax(dist))
        if dist[j] <= stop_radius:
            break
        order.append(j)
        radii.append(float(dist[j]))
        d = torus_distance(coords, coords[j], periodic)
        closer = d < dist
        nearest[closer] = len(order) - 1
        dist = np.where(closer, d, dist)
    return np.asarray(order, dtype=np.int64), np.asarray(radii), nearest


def build_general_partition(points: PointSet, h: float, q: int) -> PartitionTree:
    """Hierarchical aggregation around nested farthest-first centers.

    Level-k centers are the prefix of one farthest-first traversal whose
    insertion radius exceeds ``r_k = min(1/2, 1-h) h^k``, so they are
    ``r_k``-separated and ``r_k``-covering.  Points join the nearest level-q
    center; each level-k cell joins the coarser cell whose center is nearest
    to its own center, which makes nesting hold by construction.  When the
    finest level is not made of singletons a terminal singleton level is
    appended, so the resulting tree may have ``q + 1`` levels.
    """
    if not 0.0 < h < 1.0:
        raise ValueError(f"h must lie in (0, 1), got {h}")
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")
    coords, periodic, n = points.coords, points.periodic, points.n
    radius = [min(0.5, 1.0 - h) * h ** k for k in range(q + 1)]
    order, ins, nearest = farthest_first(coords, periodic, stop_radius=radius[q])

    if n > 1:
        tree = cKDTree(coords, boxsize=1.0 if periodic else None)
        spacing = float(tree.query(coords, k=2)[0][:, 1].min())
        n_prev = int(np.sum(ins > radius[q - 1])) if q > 1 else 0
        if q > 1 and n_prev == n:
            raise ValueError(
                f"q={q} is too large: level {q - 1} already separates every point "
                f"(separation {radius[q - 1]:.3g} below the minimal point spacing {spacing:.3g})")

    # level-q cells: points grouped by nearest selected center (ids = insertion rank)
    labels = {q: nearest.copy()}
    centers_pt = {q: order}
    for k in range(q - 1, 0, -1):
        ncent = int(np.sum(ins > radius[k]))
        child_centers = coords[centers_pt[k + 1]]
        d = torus_distance(child_centers[:, None, :], coords[order[:ncent]][None, :, :], periodic)
        child_to_parent = np.argmin(d, axis=1)
        labels[k] = child_to_parent[labels[k + 1]]
        centers_pt[k] = order[:ncent]

    lab_list = [np.zeros(n, dtype=np.int64)] + [labels[k].astype(np.int64) for k in range(1, q + 1)]
    ctr_list = [None] + [coords[centers_pt[k]] for k in range(1, q + 1)]
    if np.bincount(lab_list[-1]).max() > 1:
        lab_list.append(np.arange(n, dtype=np.int64))
        ctr_list.append(coords)
    return _tree_from_labels(points, h, lab_list, ctr_list)


def _tree_from_labels(points: PointSet, h: float, lab_list, ctr_list) -> PartitionTree:
    labels, parents, centers, radii = [], [], [], []
    prev = None
    for lab, ctr in zip(lab_list, ctr_list):
        # renumber cells in order of their smallest member so ids are deterministic
        uniq, first = np.unique(lab, return_index=True)
        rank = np.empty(lab.max() + 1, dtype=np.int64)
        rank[uniq[np.argsort(first, kind="stable")]] = np.arange(len(uniq))
        lab = rank[lab]
        ncell = len(uniq)
        if prev is None:
            par = np.array([-1], dtype=np.int64)
        else:
            par = np.empty(ncell, dtype=np.int64)
            par[lab] = prev
        if ctr is None:
            c, _ = _center_radius(points.coords, lab, ncell, points.periodic)
        else:
            c = np.empty((ncell, points.dim))
            c[rank[uniq]] = ctr[uniq]
        r = np.zeros(ncell)
        np.maximum.at(r, lab, torus_distance(points.coords, c[lab], points.periodic))
        labels.append(lab)
        parents.append(par)
        centers.append(c)
        radii.append(r)
        prev = lab
    return PartitionTree(points, h, labels, parents, centers, radii)
