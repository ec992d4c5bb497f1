"""Separation-constrained colorings of basis functions and of supernodes.

Two basis functions of level ``k`` may share a color only if their support
cells are at least ``2 rho h^(k-1)`` apart.  Colorings are built greedily per
level: a color is opened with the lowest uncolored index and then repeatedly
extended by the admissible candidate farthest from the color's members.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import MultiresBasis
from .geometry import box_gap, farthest_first, torus_distance

# relative slack on the separation test so that exact ties survive rounding
_SEP_RTOL = 1e-12


@dataclass
class SupernodeSet:
    level: np.ndarray       # per supernode
    center: np.ndarray      # (S, d)
    ptr: np.ndarray         # members of supernode s: members[ptr[s]:ptr[s+1]]
    members: np.ndarray     # basis indices, ascending within each supernode
    member_of: np.ndarray   # basis index -> supernode id

    @property
    def count(self) -> int:
        return len(self.level)

    def of(self, s: int) -> np.ndarray:
        return self.members[self.ptr[s]:self.ptr[s + 1]]

    def sizes(self) -> np.ndarray:
        return np.diff(self.ptr)

    def on_level(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.level == k)


@dataclass
class Coloring:
    colors: list[np.ndarray]        # member ids (basis indices or supernode ids)
    levels: np.ndarray              # level of each color
    rho: float
    supernodes: SupernodeSet | None = None

    @property
    def supernodal(self) -> bool:
        return self.supernodes is not None

    def __len__(self) -> int:
        return len(self.colors)

    def blocks(self) -> list[list[np.ndarray]]:
        """Per color, the basis-index groups recovered together (singletons if simplicial)."""
        if self.supernodes is None:
            return [[np.array([i]) for i in c] for c in self.colors]
        return [[self.supernodes.of(s) for s in c] for c in self.colors]

    def basis_order(self) -> np.ndarray:
        """Basis indices in recovery order: coarse to fine, colors contiguous."""
        return np.concatenate([np.concatenate(b) for b in self.blocks()])

    def counts_per_level(self) -> dict[int, int]:
        lv, cnt = np.unique(self.levels, return_counts=True)
        return {int(k): int(c) for k, c in zip(lv, cnt)}


def _cell_gaps(basis: MultiresBasis, level: int, cells_a, cells_b) -> np.ndarray:
    """Box distances between support cells (level ``level-1``), shape (|a|, |b|)."""
    tree = basis.tree
    lo, hi = tree.lo[level - 1], tree.hi[level - 1]
    a, b = np.asarray(cells_a), np.asarray(cells_b)
    return box_gap(lo[a][:, None, :], hi[a][:, None, :], lo[b][None, :, :], hi[b][None, :, :],
                   tree.periodic)


def separation(basis: MultiresBasis, k: int, rho: float) -> float:
    return 2.0 * rho * basis.tree.h ** (k - 1)


def _greedy(dist_row, avail, thr):
    """One greedy farthest-first color over items with multiplicities ``avail``.

    ``dist_row(j)`` returns the distances from item ``j`` to all items.  Returns
    the chosen item ids in insertion order and decrements ``avail``.
    """
    first = int(np.flatnonzero(avail > 0)[0])
    chosen = [first]
    avail[first] -= 1
    dist = dist_row(first).copy()
    limit = thr * (1.0 - _SEP_RTOL)
    while True:
        cand = (avail > 0) & (dist >= limit)
        if not cand.any():
            return chosen
        j = int(np.argmax(np.where(cand, dist, -1.0)))
        chosen.append(j)
        avail[j] -= 1
        np.minimum(dist, dist_row(j), out=dist)


def color_simplicial(basis: MultiresBasis, rho: float) -> Coloring:
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    tree = basis.tree
    colors, levels = [], []
    for k in range(1, basis.q + 1):
        idx = np.arange(basis.level_offsets[k - 1], basis.level_offsets[k])
        if idx.size == 0:
            continue
        cells, first, count = np.unique(basis.support[idx], return_index=True, return_counts=True)
        lo, hi = tree.lo[k - 1][cells], tree.hi[k - 1][cells]

        def dist_row(j, lo=lo, hi=hi):
            return box_gap(lo[j], hi[j], lo, hi, tree.periodic)

        avail = count.copy()
        taken = np.zeros(len(cells), dtype=np.int64)
        thr = separation(basis, k, rho)
        while avail.any():
            chosen = _greedy(dist_row, avail, thr)
            members = []
            for j in chosen:
                members.append(idx[first[j] + taken[j]])
                taken[j] += 1
            colors.append(np.sort(np.asarray(members, dtype=np.int64)))
            levels.append(k)
    return Coloring(colors, np.asarray(levels, dtype=np.int64), float(rho))


def support_centroids(basis: MultiresBasis, level: int) -> np.ndarray:
    """Arithmetic means of the member points of every level ``level`` cell."""
    tree = basis.tree
    lab = tree.labels[level]
    cnt = np.bincount(lab)
    coords = tree.points.coords
    return np.stack([np.bincount(lab, weights=coords[:, a]) for a in range(coords.shape[1])], axis=1) / cnt[:, None]


def _pack_supernodes(groups, levels, centers, n) -> SupernodeSet:
    sizes = np.array([len(g) for g in groups], dtype=np.int64)
    ptr = np.concatenate([[0], np.cumsum(sizes)])
    members = np.concatenate(groups).astype(np.int64) if groups else np.empty(0, dtype=np.int64)
    member_of = np.full(n, -1, dtype=np.int64)
    member_of[members] = np.repeat(np.arange(len(groups)), sizes)
    return SupernodeSet(np.asarray(levels, dtype=np.int64), np.asarray(centers, dtype=float).reshape(len(groups), -1),
                        ptr, members, member_of)


def aggregate_supernodes(basis: MultiresBasis, rho: float) -> SupernodeSet:
    """Group same-level basis functions around ``rho h^k``-separated centers.

    Centers are picked farthest-first among the support-cell centroids until
    every centroid is within ``rho h^k`` of one; supernode ids on a level follow
    the support-cell id of their center.  Each function joins the supernode
    whose center is nearest to its support centroid, ties to the lowest id.
    """
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    tree = basis.tree
    groups, levels, centers = [], [], []
    for k in range(1, basis.q + 1):
        idx = np.arange(basis.level_offsets[k - 1], basis.level_offsets[k])
        if idx.size == 0:
            continue
        cells, inv = np.unique(basis.support[idx], return_inverse=True)
        cen = support_centroids(basis, k - 1)[cells]
        picked, _, _ = farthest_first(cen, tree.periodic, stop_radius=rho * tree.h ** k)
        picked = np.sort(picked)
        owner = np.empty(len(cells), dtype=np.int64)
        for s in range(0, len(cells), 1024):
            d = torus_distance(cen[s:s + 1024, None, :], cen[picked][None, :, :], tree.periodic)
            owner[s:s + 1024] = np.argmin(d, axis=1)
        fn_owner = owner[inv]
        for g in range(len(picked)):
            groups.append(idx[fn_owner == g])
            levels.append(k)
            centers.append(cen[picked[g]])
    return _pack_supernodes(groups, levels, centers, basis.n)


def singleton_supernodes(basis: MultiresBasis) -> SupernodeSet:
    """One supernode per basis function, centered at its support centroid."""
    cen = np.empty((basis.n, basis.tree.points.dim))
    for k in range(1, basis.q + 1):
        r = basis.level_range(k)
        cen[r.start:r.stop] = support_centroids(basis, k - 1)[basis.support[r.start:r.stop]]
    return _pack_supernodes([np.array([i]) for i in range(basis.n)], basis.level, cen, basis.n)


def supernode_gaps(basis: MultiresBasis, snodes: SupernodeSet, rows, cols) -> np.ndarray:
    """Minimum support-cell distance between member functions of two supernode lists."""
    rows, cols = np.asarray(rows), np.asarray(cols)
    out = np.empty((len(rows), len(cols)))
    rcells, rptr = _distinct_cells(basis, snodes, rows)
    ccells, cptr = _distinct_cells(basis, snodes, cols)
    rlev = np.repeat(snodes.level[rows], np.diff(rptr))
    clev = np.repeat(snodes.level[cols], np.diff(cptr))
    tree = basis.tree
    rlo, rhi = _boxes(tree, rlev - 1, rcells)
    clo, chi = _boxes(tree, clev - 1, ccells)
    step = max(1, 2 ** 22 // max(1, len(ccells)))
    for s in range(0, len(rows), step):
        # rows s..s+step, expanded to their cells
        a, b = rptr[s], rptr[min(s + step, len(rows))]
        g = box_gap(rlo[a:b, None, :], rhi[a:b, None, :], clo[None, :, :], chi[None, :, :], tree.periodic)
        g = np.minimum.reduceat(g, cptr[:-1], axis=1)
        out[s:s + step] = np.minimum.reduceat(g, rptr[s:min(s + step, len(rows))] - a, axis=0)
    return out


def _distinct_cells(basis, snodes, ids):
    cells, sizes = [], []
    for s in ids:
        c = np.unique(basis.support[snodes.of(int(s))])
        cells.append(c)
        sizes.append(len(c))
    return np.concatenate(cells), np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)


def _boxes(tree, levels, cells):
    lo = np.empty((len(cells), tree.points.dim))
    hi = np.empty_like(lo)
    for k in np.unique(levels):
        sel = levels == k
        lo[sel], hi[sel] = tree.lo[int(k)][cells[sel]], tree.hi[int(k)][cells[sel]]
    return lo, hi


def color_supernodal(snodes: SupernodeSet, basis: MultiresBasis, rho: float) -> Coloring:
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    colors, levels = [], []
    for k in np.unique(snodes.level):
        k = int(k)
        ids = snodes.on_level(k)
        D = supernode_gaps(basis, snodes, ids, ids)
        avail = np.ones(len(ids), dtype=np.int64)
        thr = separation(basis, k, rho)
        while avail.any():
            chosen = _greedy(lambda j: D[j], avail, thr)
            colors.append(np.sort(ids[chosen]))
            levels.append(k)
    return Coloring(colors, np.asarray(levels, dtype=np.int64), float(rho), snodes)


def check_coloring(coloring: Coloring, basis: MultiresBasis) -> None:
    """Raise AssertionError if the coloring violates partition, level or separation rules."""
    order = coloring.basis_order()
    assert np.array_equal(np.sort(order), np.arange(basis.n)), "colors do not partition I"
    assert np.all(np.diff(coloring.levels) >= 0), "colors not ordered coarse to fine"
    for blocks, k in zip(coloring.blocks(), coloring.levels):
        fns = np.concatenate(blocks)
        assert np.all(basis.level[fns] == k), "color mixes levels"
        if len(blocks) < 2:
            continue
        owner = np.repeat(np.arange(len(blocks)), [len(b) for b in blocks])
        g = _cell_gaps(basis, int(k), basis.support[fns], basis.support[fns])
        cross = owner[:, None] != owner[None, :]
        thr = separation(basis, int(k), coloring.rho) * (1.0 - _SEP_RTOL)
        assert np.all(g[cross] >= thr), "same-color members too close"
