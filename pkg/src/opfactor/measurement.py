"""Measurement matrices built from a coloring, and the observations ``O = Theta M``."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .basis import MultiresBasis
from .coloring import Coloring, SupernodeSet
from .oracles import OracleError, SolverOracle


@dataclass
class ObservationSet:
    M: sp.csc_matrix        # rows: basis indices, columns: measurements
    O: np.ndarray           # Theta @ M, dense
    color_ptr: np.ndarray   # measurements of color c: columns color_ptr[c]:color_ptr[c+1]
    matvecs: int
    coloring: Coloring

    def columns(self, c: int) -> slice:
        return slice(int(self.color_ptr[c]), int(self.color_ptr[c + 1]))


def build_measurements(coloring: Coloring, n: int | None = None):
    """One column per color, ``M[:, c] = sum of e_i over i in c``.

    Returns ``(M, color_ptr)``.
    """
    if coloring.supernodal:
        raise ValueError("use build_supernodal_measurements for supernodal colorings")
    n = sum(len(c) for c in coloring.colors) if n is None else n
    rows = np.concatenate(coloring.colors)
    cols = np.repeat(np.arange(len(coloring)), [len(c) for c in coloring.colors])
    M = sp.csc_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, len(coloring)))
    return M, np.arange(len(coloring) + 1)


def build_supernodal_measurements(coloring: Coloring, supernodes: SupernodeSet | None = None,
                                  n: int | None = None):
    """``max_s #s`` columns per color; column ``l`` sums the ``l``-th member of every supernode."""
    sn = coloring.supernodes if supernodes is None else supernodes
    if sn is None:
        raise ValueError("coloring carries no supernodes")
    n = len(sn.members) if n is None else n
    rows, cols, ptr = [], [], [0]
    for c in coloring.colors:
        width = int(sn.sizes()[c].max())
        for s in c:
            mem = sn.of(int(s))
            rows.append(mem)
            cols.append(ptr[-1] + np.arange(len(mem)))
        ptr.append(ptr[-1] + width)
    M = sp.csc_matrix((np.ones(sum(len(r) for r in rows)), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, ptr[-1]))
    return M, np.asarray(ptr, dtype=np.int64)


def measure(coloring: Coloring, n: int):
    if coloring.supernodal:
        return build_supernodal_measurements(coloring, n=n)
    return build_measurements(coloring, n=n)


def observe(oracle: SolverOracle, basis: MultiresBasis, coloring: Coloring, threads: int = 1,
            M=None) -> ObservationSet:
    """Apply ``Theta = W^T A^{-1} W`` to every measurement column, one oracle call each."""
    if oracle.n != basis.n:
        raise ValueError(f"oracle has dimension {oracle.n}, basis has {basis.n}")
    if M is None:
        M, ptr = measure(coloring, basis.n)
    else:
        ptr = np.arange(M.shape[1] + 1)
    rhs = (basis.W @ M).toarray()
    before = oracle.matvecs

    def solve(cols):
        out = np.empty((basis.n, len(cols)))
        for k, j in enumerate(cols):
            try:
                out[:, k] = oracle.apply(rhs[:, j])
            except Exception as exc:
                raise OracleError(f"oracle failed on measurement column {j}: {exc}") from exc
        return out

    ncol = M.shape[1]
    if threads > 1 and oracle.concurrency_safe and ncol > 1:
        chunks = np.array_split(np.arange(ncol), min(threads * 4, ncol))
        with ThreadPoolExecutor(max_workers=threads) as pool:
            sol = np.concatenate(list(pool.map(solve, chunks)), axis=1)
    else:
        sol = solve(np.arange(ncol))
    O = np.asarray(basis.W.T @ sol)
    return ObservationSet(M, O, ptr, oracle.matvecs - before, coloring)
