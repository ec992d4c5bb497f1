"""Haar-type multiresolution basis built on a :class:`PartitionTree`.

Level 1 holds the normalized indicators of the level-1 cells (the coarsest
space is not split off, so ``W`` is square).  On level ``k >= 2`` every parent
cell with ``m`` children contributes ``m - 1`` columns spanning the part of the
child indicators orthogonal to the parent indicator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .geometry import PartitionTree


@dataclass
class MultiresBasis:
    tree: PartitionTree
    W: sp.csc_matrix
    level: np.ndarray
    support: np.ndarray
    level_offsets: np.ndarray

    @property
    def n(self) -> int:
        return self.W.shape[0]

    @property
    def q(self) -> int:
        return len(self.level_offsets) - 1

    def level_range(self, k: int) -> range:
        return range(int(self.level_offsets[k - 1]), int(self.level_offsets[k]))

    def support_box(self, idx):
        """Bounding boxes of ``t(w_i)`` for the given basis indices."""
        idx = np.asarray(idx)
        lv = self.level[idx] - 1
        lo = np.empty(idx.shape + (self.tree.points.dim,))
        hi = np.empty_like(lo)
        for k in np.unique(lv):
            sel = lv == k
            lo[sel], hi[sel] = self.tree.box(int(k), self.support[idx[sel]])
        return lo, hi

    def support_members(self, i: int) -> np.ndarray:
        return self.tree.members(int(self.level[i]) - 1, int(self.support[i]))

    def apply(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.n:
            raise ValueError(f"coefficient vector has length {v.shape[0]}, basis has {self.n} columns")
        return self.W @ v

    def apply_transpose(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape[0] != self.n:
            raise ValueError(f"vector has length {u.shape[0]}, expected {self.n}")
        return self.W.T @ u


def _local_complement(sizes: tuple[int, ...]) -> np.ndarray:
    """Rows: orthonormal coefficients (w.r.t. normalized child indicators)
    spanning the complement of the parent indicator.  Modified Gram-Schmidt on
    the child indicators in ascending order, two passes."""
    m = len(sizes)
    parent = np.sqrt(np.asarray(sizes, dtype=float))
    parent /= np.linalg.norm(parent)
    kept = [parent]
    for j in range(m):
        v = np.zeros(m)
        v[j] = 1.0
        for _ in range(2):
            for u in kept:
                v -= (u @ v) * u
        nv = np.linalg.norm(v)
        if nv > 1e-8:
            kept.append(v / nv)
        if len(kept) == m:
            break
    return np.array(kept[1:]).reshape(m - 1, m)


def build_haar_basis(tree: PartitionTree) -> MultiresBasis:
    n = tree.n
    rows, cols, vals = [], [], []
    level, support, offsets = [], [], [0]
    ncol = 0
    for k in range(1, tree.q + 1):
        lab = tree.labels[k]
        par = tree.parents[k]
        csize = tree.sizes(k)
        nparent = tree.num_cells(k - 1)
        # children grouped by parent (ascending), ascending ids inside each group
        order = np.argsort(par, kind="stable")
        nchild = np.bincount(par, minlength=nparent)
        start = np.zeros(nparent + 1, dtype=np.int64)
        np.cumsum(nchild, out=start[1:])
        local = np.empty(len(par), dtype=np.int64)
        local[order] = np.arange(len(par)) - start[par[order]]

        if k == 1:
            nfun = nchild.copy()
        else:
            nfun = np.maximum(nchild - 1, 0)
        foff = ncol + np.concatenate([[0], np.cumsum(nfun)])
        maxm = int(nchild.max())
        coef = np.zeros((nparent, max(maxm, 1), maxm))
        cache: dict[tuple[int, ...], np.ndarray] = {}
        for p in range(nparent):
            kids = order[start[p]:start[p + 1]]
            if k == 1:
                coef[p, :len(kids), :len(kids)] = np.eye(len(kids))
                continue
            if len(kids) < 2:
                continue
            key = tuple(int(s) for s in csize[kids])
            if key not in cache:
                cache[key] = _local_complement(key)
            coef[p, :len(kids) - 1, :len(kids)] = cache[key]

        pts = np.arange(n)
        c = lab
        p = par[c]
        j = local[c]
        scale = 1.0 / np.sqrt(csize[c])
        for l in range(int(nfun.max()) if nfun.size else 0):
            sel = nfun[p] > l
            rows.append(pts[sel])
            cols.append(foff[p[sel]] + l)
            vals.append(coef[p[sel], l, j[sel]] * scale[sel])
        for q_ in range(nparent):
            level.extend([k] * int(nfun[q_]))
            support.extend([q_] * int(nfun[q_]))
        ncol += int(nfun.sum())
        offsets.append(ncol)

    W = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, ncol))
    W.sort_indices()
    W.eliminate_zeros()
    return MultiresBasis(tree, W, np.asarray(level, dtype=np.int64),
                         np.asarray(support, dtype=np.int64), np.asarray(offsets, dtype=np.int64))


def check_basis(basis: MultiresBasis, tol: float = 1e-12) -> None:
    """Raise AssertionError unless W is orthonormal, complete, local and mean-zero."""
    W = basis.W
    gram = (W.T @ W).toarray() if basis.n <= 4096 else None
    if gram is not None:
        assert np.abs(gram - np.eye(W.shape[1])).max() <= tol, "W is not orthonormal"
    else:
        diag = np.asarray(W.multiply(W).sum(axis=0)).ravel()
        assert np.abs(diag - 1).max() <= tol
    assert W.shape[1] == basis.n, "basis is incomplete"
    coo = W.tocoo()
    lv = basis.level[coo.col] - 1
    cell_of_row = np.empty_like(coo.row)
    for k in np.unique(lv):
        sel = lv == k
        cell_of_row[sel] = basis.tree.labels[int(k)][coo.row[sel]]
    assert np.array_equal(cell_of_row, basis.support[coo.col]), "column leaves its support cell"
    sums = np.asarray(W.sum(axis=0)).ravel()
    fine = basis.level >= 2
    assert np.all(np.abs(sums[fine]) <= tol), "fine-level column has nonzero mean"
