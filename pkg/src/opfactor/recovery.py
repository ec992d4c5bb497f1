"""Cholesky recovery from colored measurements, and queries on the recovered factor.

Everything here works in *recovery positions*: basis indices reordered coarse
to fine with the colors (and, inside a color, the supernodes) contiguous.
:class:`SparseFactor` keeps the permutation and exposes its queries in basis
coordinates.

Simplicial recovery is run as block recovery with one-element blocks, so the
two algorithms share a single code path.  The sparsity pattern only depends
on the coloring and is computed before any numerical work.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import json
from pathlib import Path
import warnings

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .basis import MultiresBasis
from .coloring import Coloring
from .geometry import box_gap, torus_distance
from .measurement import ObservationSet


class NotPositiveDefiniteError(RuntimeError):
    """A pivot of the recovered factor was not positive; usually rho is too small."""

    def __init__(self, color: int, index: int, value: float):
        self.color, self.index, self.value = color, index, value
        super().__init__(f"nonpositive pivot {value:.3e} at basis index {index} (color {color}); "
                         "increase rho")


# ---------------------------------------------------------------------------
# nearest-member assignment


@dataclass
class _Boxes:
    """Support-cell boxes of a list of blocks, flattened; block b owns rows ptr[b]:ptr[b+1]."""
    lo: np.ndarray
    hi: np.ndarray
    ptr: np.ndarray

    @classmethod
    def of(cls, basis: MultiresBasis, blocks) -> "_Boxes":
        tree = basis.tree
        keys, sizes = [], []
        for b in blocks:
            lv = basis.level[b] - 1
            key = np.unique(lv * (tree.n + 1) + basis.support[b])
            keys.append(key)
            sizes.append(len(key))
        keys = np.concatenate(keys)
        lv, cell = np.divmod(keys, tree.n + 1)
        lo = np.empty((len(keys), tree.points.dim))
        hi = np.empty_like(lo)
        for k in np.unique(lv):
            sel = lv == k
            lo[sel], hi[sel] = tree.lo[int(k)][cell[sel]], tree.hi[int(k)][cell[sel]]
        return cls(lo, hi, np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64))


def _nearest(rb: _Boxes, rows: range, cb: _Boxes, cols: range, periodic: bool) -> np.ndarray:
    """For every block of ``rb`` in ``rows``, the offset within ``cols`` of the nearest
    block of ``cb`` (minimum support-cell distance, ties to the first)."""
    if len(cols) == 1:
        return np.zeros(len(rows), dtype=np.int64)
    c0, c1 = cb.ptr[cols.start], cb.ptr[cols.stop]
    clo, chi = cb.lo[c0:c1], cb.hi[c0:c1]
    cptr = cb.ptr[cols.start:cols.stop] - c0
    out = np.empty(len(rows), dtype=np.int64)
    step = max(1, 2 ** 21 // max(1, c1 - c0))
    for s in range(rows.start, rows.stop, step):
        e = min(s + step, rows.stop)
        r0, r1 = rb.ptr[s], rb.ptr[e]
        g = box_gap(rb.lo[r0:r1, None, :], rb.hi[r0:r1, None, :], clo[None], chi[None], periodic)
        if c1 - c0 != len(cols):
            g = np.minimum.reduceat(g, cptr, axis=1)
        if r1 - r0 != e - s:
            g = np.minimum.reduceat(g, rb.ptr[s:e] - r0, axis=0)
        out[s - rows.start:e - rows.start] = np.argmin(g, axis=1)
    return out


# ---------------------------------------------------------------------------
# sparsity pattern

SCATTER_RULES = ("row", "center")


@dataclass
class Pattern:
    """Block structure and CSC pattern of the factor, in recovery positions."""
    order: np.ndarray          # position -> basis index
    block_start: np.ndarray    # first position of every block (plus sentinel)
    color_blocks: np.ndarray   # blocks of color c: color_blocks[c]:color_blocks[c+1]
    assign_ptr: np.ndarray     # later rows scattered into block b: assign[assign_ptr[b]:assign_ptr[b+1]]
    assign: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    csr_indptr: np.ndarray = field(repr=False)
    csr_cols: np.ndarray = field(repr=False)
    csr_map: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.order)

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1])


def _assign_rows(coloring: Coloring, basis: MultiresBasis, blocks, block_start, color_blocks, rule: str,
                 only: int | None = None):
    """Per block, the sorted positions of the later rows scattered into it."""
    order = np.concatenate(blocks).astype(np.int64)
    n, nb = len(order), len(blocks)
    periodic = basis.tree.periodic
    by_row = rule == "row" or not coloring.supernodal
    if rule not in SCATTER_RULES:
        raise ValueError(f"unknown scatter rule {rule!r}; expected one of {SCATTER_RULES}")
    if by_row:
        first = 0 if only is None else int(block_start[color_blocks[only + 1]])
        rows = _Boxes.of(basis, [order[p:p + 1] for p in range(first, n)])
        rows.ptr = np.concatenate([np.zeros(first, dtype=np.int64), rows.ptr])
        cells = _Boxes.of(basis, blocks)
    else:
        center = coloring.supernodes.center[np.concatenate(coloring.colors)]
    assigned: list[np.ndarray] = [np.empty(0, dtype=np.int64)] * nb
    for c in range(len(coloring.colors)) if only is None else [only]:
        b0, b1 = int(color_blocks[c]), int(color_blocks[c + 1])
        e = int(block_start[b1])
        if e == n:
            continue
        if by_row:
            near = _nearest(rows, range(e, n), cells, range(b0, b1), periodic)
        else:
            d = torus_distance(center[b1:, None, :], center[None, b0:b1, :], periodic)
            near = np.repeat(np.argmin(d, axis=1), np.diff(block_start[b1:]))
        later = np.arange(e, n)
        srt = np.argsort(near, kind="stable")
        cuts = np.searchsorted(near[srt], np.arange(b1 - b0 + 1))
        for j in range(b1 - b0):
            assigned[b0 + j] = later[srt[cuts[j]:cuts[j + 1]]]
    return assigned


def _structure(coloring: Coloring):
    blocks = [b for bl in coloring.blocks() for b in bl]
    block_start = np.concatenate([[0], np.cumsum([len(b) for b in blocks])]).astype(np.int64)
    color_blocks = np.concatenate([[0], np.cumsum([len(c) for c in coloring.colors])]).astype(np.int64)
    return blocks, block_start, color_blocks


def build_pattern(coloring: Coloring, basis: MultiresBasis, rule: str = "row") -> Pattern:
    """Sparsity pattern of the recovered factor.

    Column block ``b`` holds its own (lower) diagonal block and every later row
    whose nearest block in ``b``'s color is ``b``.  With ``rule="row"`` each
    row is assigned on its own by support-cell distance; ``rule="center"``
    assigns whole later supernodes by the distance between supernode centers.
    The two agree for simplicial colorings.
    """
    blocks, block_start, color_blocks = _structure(coloring)
    order = np.concatenate(blocks).astype(np.int64)
    nb, n = len(blocks), len(order)
    assigned = _assign_rows(coloring, basis, blocks, block_start, color_blocks, rule)
    assign_ptr = np.concatenate([[0], np.cumsum([len(a) for a in assigned])]).astype(np.int64)
    assign = np.concatenate(assigned).astype(np.int64)

    # column p of block b: rows p..end(b) then the assigned rows
    col_len = np.empty(n, dtype=np.int64)
    extra = np.diff(assign_ptr)
    for b in range(nb):
        p0, p1 = block_start[b], block_start[b + 1]
        col_len[p0:p1] = (p1 - np.arange(p0, p1)) + extra[b]
    idx_t = np.int32 if col_len.sum() < 2 ** 31 - 1 else np.int64
    indptr = np.concatenate([[0], np.cumsum(col_len)]).astype(idx_t)
    indices = np.empty(int(indptr[-1]), dtype=idx_t)
    for b in range(nb):
        tail = assign[assign_ptr[b]:assign_ptr[b + 1]]
        p0, p1 = block_start[b], block_start[b + 1]
        for p in range(p0, p1):
            seg = indices[indptr[p]:indptr[p + 1]]
            seg[:p1 - p] = np.arange(p, p1)
            seg[p1 - p:] = tail

    # row-major view of the same entries
    col_of = np.repeat(np.arange(n, dtype=idx_t), np.diff(indptr))
    csr_map = np.lexsort((col_of, indices)).astype(np.int64)
    csr_cols = col_of[csr_map]
    csr_indptr = np.concatenate([[0], np.cumsum(np.bincount(indices, minlength=n))]).astype(np.int64)
    return Pattern(order, block_start, color_blocks, assign_ptr, assign, indptr, indices,
                   csr_indptr, csr_cols, csr_map)


# ---------------------------------------------------------------------------
# the factor


@dataclass
class SparseFactor:
    """Lower-triangular ``L`` with ``Theta ~ P L L^T P^T``; ``perm[p]`` is the basis index at position p."""

    L: sp.csc_matrix
    perm: np.ndarray
    rho: float = np.inf
    supernodal: bool = False
    matvecs: int = 0
    rank: int | None = None
    _csr: sp.csr_matrix | None = field(default=None, repr=False)

    def __post_init__(self):
        self.perm = np.asarray(self.perm, dtype=np.int64)
        self.pos = np.empty_like(self.perm)
        self.pos[self.perm] = np.arange(len(self.perm))
        if self.rank is None:
            self.rank = self.L.shape[1]

    @property
    def n(self) -> int:
        return self.L.shape[0]

    @property
    def nnz(self) -> int:
        return self.L.nnz

    @property
    def rows(self) -> sp.csr_matrix:
        if self._csr is None:
            self._csr = self.L.tocsr()
            self._csr.sort_indices()
        return self._csr

    def diagonal(self) -> np.ndarray:
        return self.L.diagonal()

    def _to_pos(self, x):
        return np.asarray(x, dtype=float)[self.perm]

    def _from_pos(self, y):
        out = np.empty_like(y)
        out[self.perm] = y
        return out

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """``L L^T x`` in basis coordinates."""
        xp = self._to_pos(x)
        return self._from_pos(self.L @ (self.L.T @ xp))

    def solve(self, b: np.ndarray) -> np.ndarray:
        """``(L L^T)^{-1} b`` by two sparse triangular solves."""
        if self.rank < self.n:
            raise ValueError("cannot solve with a truncated (rank-deficient) factor")
        bp = self._to_pos(b)
        y = spla.spsolve_triangular(self.rows, bp, lower=True)
        x = spla.spsolve_triangular(sp.csr_matrix(self.L.T), y, lower=False)
        return self._from_pos(x)

    def entry(self, i: int, j: int) -> float:
        """``(L L^T)_{ij}`` for basis indices i, j from two sparse rows."""
        R = self.rows
        a, b = self.pos[i], self.pos[j]
        ca, va = R.indices[R.indptr[a]:R.indptr[a + 1]], R.data[R.indptr[a]:R.indptr[a + 1]]
        cb, vb = R.indices[R.indptr[b]:R.indptr[b + 1]], R.data[R.indptr[b]:R.indptr[b + 1]]
        _, ia, ib = np.intersect1d(ca, cb, assume_unique=True, return_indices=True)
        return float(va[ia] @ vb[ib])

    def logdet(self) -> float:
        """``log det(L L^T)``."""
        if self.rank < self.n:
            raise ValueError("log-determinant of a truncated factor is -inf")
        return float(2.0 * np.sum(np.log(self.diagonal())))

    def sample(self, seed=None, size: int | None = None) -> np.ndarray:
        """Draw ``L z`` with ``z`` standard normal: samples of ``N(0, L L^T)``."""
        rng = np.random.default_rng(seed)
        shape = (self.n,) if size is None else (self.n, size)
        z = rng.standard_normal(shape)
        return self._from_pos(self.L @ z)

    def truncate(self, k: int) -> "SparseFactor":
        """Keep only the first ``k`` columns (a rank-``k`` approximation)."""
        if not 0 <= k <= self.n:
            raise ValueError(f"prefix {k} outside [0, {self.n}]")
        L = self.L
        indptr = L.indptr.copy()
        indptr[k + 1:] = indptr[k]
        nz = int(indptr[k])
        Lk = sp.csc_matrix((L.data[:nz].copy(), L.indices[:nz].copy(), indptr), shape=L.shape)
        return SparseFactor(Lk, self.perm, self.rho, self.supernodal, self.matvecs, rank=min(k, self.rank))

    def dense(self) -> np.ndarray:
        """``L L^T`` as a dense matrix in basis coordinates."""
        Ld = self.L.toarray()
        out = np.empty((self.n, self.n))
        out[np.ix_(self.perm, self.perm)] = Ld @ Ld.T
        return out

    def in_basis_coordinates(self) -> sp.csc_matrix:
        """``P L``: rows indexed by basis index, so that ``Theta ~ (P L)(P L)^T``."""
        return sp.csc_matrix(self.L[self.pos, :])

    def in_original_basis(self, basis: MultiresBasis) -> sp.csc_matrix:
        """``W P L``: a factor of ``A^{-1}`` with rows indexed by the original unknowns."""
        return sp.csc_matrix(basis.W @ self.in_basis_coordinates())


# ---------------------------------------------------------------------------
# dense kernels for the diagonal blocks


def _block_cholesky(D: np.ndarray, eps: float):
    """Lower Cholesky factor of a small SPD block; returns (C, None) or (None, (j, pivot))."""
    w = D.shape[0]
    C = np.zeros_like(D)
    for j in range(w):
        v = D[j:, j] - C[j:, :j] @ C[j, :j]
        if not v[0] > eps:
            return None, (j, float(v[0]))
        C[j, j] = np.sqrt(v[0])
        C[j + 1:, j] = v[1:] / C[j, j]
    return C, None


def _solve_right_lower_t(U: np.ndarray, C: np.ndarray) -> np.ndarray:
    """``X`` with ``X C^T = U`` for lower-triangular ``C``."""
    X = np.empty_like(U)
    for l in range(C.shape[0]):
        X[:, l] = (U[:, l] - X[:, :l] @ C[l, :l]) / C[l, l]
    return X


# ---------------------------------------------------------------------------
# recovery


def _recover(obs: ObservationSet, pattern: Pattern, threads: int = 1, supernodal: bool = False) -> SparseFactor:
    n = pattern.n
    O = obs.O[pattern.order]
    M = sp.csr_matrix(obs.M)[pattern.order]
    eps = 1e-14 * max(float(np.abs(obs.O).max()), 1e-300)
    indptr, indices = pattern.indptr, pattern.indices
    data = np.zeros(pattern.nnz)
    csr_ptr, csr_cols, csr_map = pattern.csr_indptr, pattern.csr_cols, pattern.csr_map
    bstart = pattern.block_start
    worst_upper = 0.0
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None

    def residual(cols: slice, s: int, e: int) -> np.ndarray:
        Oc = O[:, cols]
        if s == 0:
            return Oc.copy()
        # (L^T M_c): rows s..e-1 of the current factor, weighted by their measurement column
        Mc = M[s:e, cols]
        m = Oc.shape[1]
        a, b = csr_ptr[s], csr_ptr[e]
        ent_rows = np.repeat(np.arange(s, e), np.diff(csr_ptr[s:e + 1]))
        sel = csr_cols[a:b] < s
        Mcoo = Mc.tocsr()
        # each row of a color block carries exactly one 1 in Mc
        slot = np.full(e - s, -1, dtype=np.int64)
        rr, cc = Mcoo.nonzero()
        slot[rr] = cc
        eta = slot[ent_rows[sel] - s]
        keep = eta >= 0
        Y = np.bincount(csr_cols[a:b][sel][keep].astype(np.int64) * m + eta[keep],
                        weights=data[csr_map[a:b][sel][keep]], minlength=s * m).reshape(s, m)
        nz = int(indptr[s])
        Lp = sp.csc_matrix((data[:nz], indices[:nz], indptr[:s + 1]), shape=(n, s), copy=False)
        return Oc - Lp @ Y

    def finish_block(b: int, R: np.ndarray, color: int):
        p0, p1 = int(bstart[b]), int(bstart[b + 1])
        w = p1 - p0
        rows = indices[indptr[p0]:indptr[p0 + 1]]
        U = R[rows, :w]
        D = U[:w]
        Dsym = 0.5 * (D + D.T)
        C, bad = _block_cholesky(Dsym, eps)
        if bad is not None:
            lam = float(np.linalg.eigvalsh(Dsym)[0]) if w > 1 else bad[1]
            raise NotPositiveDefiniteError(color, int(pattern.order[p0 + bad[0]]), lam)
        U = U.copy()
        U[:w] = Dsym
        X = _solve_right_lower_t(U, C)
        upper = np.abs(np.triu(X[:w], 1)).max() / C.max() if w > 1 else 0.0
        for l in range(w):
            data[indptr[p0 + l]:indptr[p0 + l + 1]] = X[l:, l]
        return upper

    for c in range(len(obs.coloring)):
        b0, b1 = int(pattern.color_blocks[c]), int(pattern.color_blocks[c + 1])
        s, e = int(bstart[b0]), int(bstart[b1])
        cols = obs.columns(c)
        R = residual(cols, s, e)
        if pool is None or b1 - b0 < 2:
            ups = [finish_block(b, R, c) for b in range(b0, b1)]
        else:
            ups = list(pool.map(lambda b: finish_block(b, R, c), range(b0, b1)))
        worst_upper = max(worst_upper, max(ups))
    if pool is not None:
        pool.shutdown()

    if worst_upper > 1e-10:
        warnings.warn(f"diagonal blocks deviate from lower-triangular form by {worst_upper:.2e}")
    L = sp.csc_matrix((data, indices.copy(), indptr.copy()), shape=(n, n))
    return SparseFactor(L, pattern.order, obs.coloring.rho, supernodal, obs.matvecs)


def cholesky_recover(obs: ObservationSet, basis: MultiresBasis, pattern: Pattern | None = None,
                     threads: int = 1) -> SparseFactor:
    """Simplicial recovery: one residual per color, scattered to the nearest member
    and scaled by the inverse square root of each new column's diagonal."""
    if obs.coloring.supernodal:
        raise ValueError("coloring is supernodal; use supernodal_cholesky_recover")
    pattern = build_pattern(obs.coloring, basis) if pattern is None else pattern
    return _recover(obs, pattern, threads, supernodal=False)


def supernodal_cholesky_recover(obs: ObservationSet, basis: MultiresBasis, pattern: Pattern | None = None,
                                threads: int = 1, rule: str = "row") -> SparseFactor:
    """Block recovery: residual block per color, block scatter, symmetrized diagonal
    block factored densely and applied from the right as ``C^{-T}``."""
    if not obs.coloring.supernodal:
        raise ValueError("coloring is simplicial; use cholesky_recover")
    pattern = build_pattern(obs.coloring, basis, rule) if pattern is None else pattern
    return _recover(obs, pattern, threads, supernodal=True)


def recover(obs: ObservationSet, basis: MultiresBasis, threads: int = 1, rule: str = "row") -> SparseFactor:
    pattern = build_pattern(obs.coloring, basis, rule)
    return _recover(obs, pattern, threads, supernodal=obs.coloring.supernodal)


# ---------------------------------------------------------------------------
# scatter as stand-alone operators (basis coordinates)


def _scatter(U: np.ndarray, coloring: Coloring, c: int, basis: MultiresBasis, rule: str) -> sp.csc_matrix:
    blocks, block_start, color_blocks = _structure(coloring)
    order = np.concatenate(blocks)
    assigned = _assign_rows(coloring, basis, blocks, block_start, color_blocks, rule, only=c)
    b0, b1 = int(color_blocks[c]), int(color_blocks[c + 1])
    widths = [len(blocks[b]) for b in range(b0, b1)]
    offs = np.concatenate([[0], np.cumsum(widths)])
    rows, cols, vals = [], [], []
    for j, b in enumerate(range(b0, b1)):
        r = order[np.concatenate([np.arange(block_start[b], block_start[b + 1]), assigned[b]])]
        w = widths[j]
        rows.append(np.repeat(r, w))
        cols.append(np.tile(offs[j] + np.arange(w), len(r)))
        vals.append(U[r, :w].ravel())
    return sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(basis.n, int(offs[-1])))


def scatter_simplicial(u: np.ndarray, coloring: Coloring, c: int, basis: MultiresBasis) -> sp.csc_matrix:
    """Split ``u`` (over basis indices) into one column per member of color ``c``.

    Row ``i`` goes to the member whose support cell is nearest to ``t(w_i)``
    (ties to the lowest index), provided that member precedes or equals ``i``
    in the recovery order.
    """
    if coloring.supernodal:
        raise ValueError("coloring is supernodal; use scatter_supernodal")
    u = np.asarray(u, dtype=float).reshape(-1, 1)
    return _scatter(u, coloring, c, basis, "row")


def scatter_supernodal(U: np.ndarray, coloring: Coloring, c: int, basis: MultiresBasis,
                       rule: str = "row") -> sp.csc_matrix:
    """Block scatter of ``U`` (rows over basis indices, ``m_c`` columns).

    The result has one column block per supernode ``s`` of color ``c``, of
    width ``#s``, holding ``U[i, :#s]`` for the rows of ``s`` itself and the
    later rows assigned to ``s`` (see :func:`build_pattern`).
    """
    if not coloring.supernodal:
        raise ValueError("coloring is simplicial; use scatter_simplicial")
    return _scatter(np.asarray(U, dtype=float).reshape(basis.n, -1), coloring, c, basis, rule)


def dense_theta(oracle, basis: MultiresBasis) -> np.ndarray:
    """``W^T A^{-1} W`` probed column by column (``N`` oracle calls)."""
    Wd = basis.W.toarray()
    T = basis.W.T @ oracle.apply(Wd)
    return 0.5 * (T + T.T)


def truncate_to_pattern(L: np.ndarray, pattern: Pattern) -> sp.csc_matrix:
    """Restrict a dense lower-triangular matrix (recovery positions) to the pattern."""
    cols = np.repeat(np.arange(pattern.n), np.diff(pattern.indptr))
    return sp.csc_matrix((L[pattern.indices, cols], pattern.indices.copy(), pattern.indptr.copy()),
                         shape=(pattern.n, pattern.n))


def truncate_low_rank(F: SparseFactor, k: int | None = None, colors: int | None = None,
                      pattern: Pattern | None = None) -> SparseFactor:
    """Leading ``k`` columns of ``F``, or the columns of its first ``colors`` colors."""
    if (k is None) == (colors is None):
        raise ValueError("give exactly one of k and colors")
    if colors is not None:
        if pattern is None:
            raise ValueError("a color prefix needs the pattern")
        if not 0 <= colors <= len(pattern.color_blocks) - 1:
            raise ValueError(f"color prefix {colors} outside [0, {len(pattern.color_blocks) - 1}]")
        k = int(pattern.block_start[pattern.color_blocks[colors]])
    return F.truncate(k)


# ---------------------------------------------------------------------------
# factor files
#
# layout: b"OPFACT1\n", 8-byte little-endian header length, UTF-8 JSON header,
# then the raw little-endian arrays perm (int64), indptr (int64), indices
# (int64), data (float64) in that order.

_MAGIC = b"OPFACT1\n"


def save_factor(F: SparseFactor, path) -> None:
    L = F.L
    header = {"n": int(F.n), "nnz": int(L.nnz), "rho": None if not np.isfinite(F.rho) else float(F.rho),
              "supernodal": bool(F.supernodal), "matvecs": int(F.matvecs), "rank": int(F.rank)}
    head = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(np.uint64(len(head)).astype("<u8").tobytes())
        fh.write(head)
        for arr, dt in ((F.perm, "<i8"), (L.indptr, "<i8"), (L.indices, "<i8"), (L.data, "<f8")):
            fh.write(np.ascontiguousarray(arr, dtype=dt).tobytes())


def load_factor(path) -> SparseFactor:
    raw = Path(path).read_bytes()
    if not raw.startswith(_MAGIC):
        raise ValueError(f"{path} is not a factor file")
    off = len(_MAGIC)
    hlen = int(np.frombuffer(raw, "<u8", 1, off)[0])
    off += 8
    try:
        header = json.loads(raw[off:off + hlen])
        n, nnz = int(header["n"]), int(header["nnz"])
    except (ValueError, KeyError) as exc:
        raise ValueError(f"corrupt header in {path}: {exc}") from exc
    off += hlen
    need = off + 8 * (n + (n + 1) + nnz + nnz)
    if len(raw) != need:
        raise ValueError(f"{path} has {len(raw)} bytes, expected {need}")

    def take(count, dt):
        nonlocal off
        a = np.frombuffer(raw, dt, count, off).copy()
        off += 8 * count
        return a

    perm, indptr, indices, data = take(n, "<i8"), take(n + 1, "<i8"), take(nnz, "<i8"), take(nnz, "<f8")
    L = sp.csc_matrix((data, indices, indptr), shape=(n, n))
    rho = np.inf if header["rho"] is None else header["rho"]
    return SparseFactor(L, perm, rho, header["supernodal"], header["matvecs"], rank=header.get("rank"))
