"""Black-box solvers ``b -> A^{-1} b`` used as measurement oracles.

Every oracle counts how many right-hand sides it has solved.  A 2-D input of
shape ``(n, m)`` is ``m`` solves.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.fft
import scipy.io
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import PointSet


class OracleError(RuntimeError):
    pass


class SolverOracle:
    self_adjoint = True
    concurrency_safe = True

    def __init__(self, n: int):
        self.n = int(n)
        self._count = 0
        self._lock = threading.Lock()

    @property
    def matvecs(self) -> int:
        return self._count

    def apply(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.n:
            raise ValueError(f"right-hand side has {b.shape[0]} rows, oracle expects {self.n}")
        with self._lock:
            self._count += 1 if b.ndim == 1 else b.shape[1]
        return self._solve(b)

    __call__ = apply

    def _solve(self, b: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def check(self, probes: int = 3, seed: int = 0, rtol: float = 1e-10) -> None:
        """Spot-check linearity and symmetry on random probes (costs ``3 * probes`` solves)."""
        rng = np.random.default_rng(seed)
        for _ in range(probes):
            a, b = rng.standard_normal(self.n), rng.standard_normal(self.n)
            alpha, beta = rng.standard_normal(2)
            ua, ub = self.apply(a), self.apply(b)
            uab = self.apply(alpha * a + beta * b)
            lin = alpha * ua + beta * ub
            if np.linalg.norm(uab - lin) > rtol * max(np.linalg.norm(lin), 1e-300):
                raise OracleError("oracle is not linear")
            s1, s2 = a @ ub, ua @ b
            if abs(s1 - s2) > rtol * max(abs(s1), abs(s2), 1e-300):
                raise OracleError("oracle is not symmetric")


class SparseSolveOracle(SolverOracle):
    """Solves with a sparse SPD matrix, factored once (conjugate gradients as fallback)."""

    def __init__(self, A: sp.spmatrix, method: str = "direct", cg_rtol: float = 1e-13):
        super().__init__(A.shape[0])
        self.A = sp.csc_matrix(A)
        self.method = method
        self.cg_rtol = cg_rtol
        self._lu = None
        if method == "direct":
            try:
                self._lu = spla.splu(self.A, permc_spec="MMD_AT_PLUS_A")
            except (MemoryError, RuntimeError):
                self.method = "cg"
        elif method != "cg":
            raise ValueError(f"unknown solve method {method!r}")

    def _solve(self, b):
        if self._lu is not None:
            return self._lu.solve(b)
        if b.ndim == 2:
            return np.column_stack([self._cg(b[:, j]) for j in range(b.shape[1])])
        return self._cg(b)

    def _cg(self, b):
        x, info = spla.cg(self.A, b, rtol=self.cg_rtol, atol=0.0, maxiter=10 * self.n)
        if info != 0:
            res = np.linalg.norm(b - self.A @ x) / max(np.linalg.norm(b), 1e-300)
            raise OracleError(f"conjugate gradients did not converge: relative residual {res:.3e}")
        return x


class FFTOracle(SolverOracle):
    """Diagonal in the discrete Fourier basis of a periodic ``n^d`` grid."""

    def __init__(self, n: int, dim: int, symbol: np.ndarray):
        super().__init__(n ** dim)
        self.grid = (n,) * dim
        # symbol on the half-spectrum used by rfftn
        self._inv = 1.0 / symbol[..., : n // 2 + 1]

    def _solve(self, b):
        d = len(self.grid)
        x = b.reshape(self.grid + b.shape[1:])
        axes = tuple(range(d))
        inv = self._inv.reshape(self._inv.shape + (1,) * (b.ndim - 1))
        u = scipy.fft.irfftn(scipy.fft.rfftn(x, axes=axes) * inv, s=self.grid, axes=axes)
        return u.reshape(b.shape)


class DenseOracle(SolverOracle):
    """In-memory SPD matrix; ``inverse=True`` means the matrix already is ``A^{-1}``."""

    def __init__(self, matrix: np.ndarray, inverse: bool = False):
        matrix = np.asarray(matrix, dtype=float)
        super().__init__(matrix.shape[0])
        self.matrix = matrix
        self.inverse = inverse
        if not inverse:
            self._cho = scipy.linalg.cho_factor(matrix, lower=True)

    def _solve(self, b):
        if self.inverse:
            return self.matrix @ b
        return scipy.linalg.cho_solve(self._cho, b)


def dense_test_oracle(matrix, inverse: bool = False) -> DenseOracle:
    return DenseOracle(matrix, inverse)


@dataclass(frozen=True)
class ProblemSpec:
    kind: str = "laplace_potential"
    n: int = 64
    dim: int = 2
    s: float = 1.0
    seed: int = 0
    path: str | None = None
    coords: str | None = None
    scaled: bool = False

    def __post_init__(self):
        kinds = ("laplace_potential", "rough_conductivity", "fractional", "matrix_file", "dense_test")
        if self.kind not in kinds:
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if self.kind in kinds[:3] and (self.n < 2 or self.n & (self.n - 1)):
            raise ValueError(f"grid size must be a power of two, got {self.n}")
        if not self.s > 0:
            raise ValueError(f"fractional order must be positive, got {self.s}")
        if self.kind == "matrix_file" and not self.path:
            raise ValueError("matrix_file problems need a path")


def periodic_laplacian(n: int, dim: int) -> sp.csr_matrix:
    """Unit-weight periodic ``(2d+1)``-point stencil in C order."""
    e = np.ones(n)
    T = sp.diags([2 * e, -e[:-1], -e[:-1]], [0, 1, -1], format="lil")
    T[0, n - 1] -= 1.0
    T[n - 1, 0] -= 1.0
    T = sp.csr_matrix(T)
    I = sp.identity(n, format="csr")
    out = sp.csr_matrix((n ** dim, n ** dim))
    for axis in range(dim):
        term = sp.identity(1, format="csr")
        for a in range(dim):
            term = sp.kron(term, T if a == axis else I, format="csr")
        out = out + term
    return out


def laplacian_symbol(n: int, dim: int) -> np.ndarray:
    lam1 = 2.0 - 2.0 * np.cos(2.0 * np.pi * np.arange(n) / n)
    grids = np.meshgrid(*([lam1] * dim), indexing="ij")
    return np.sum(grids, axis=0)


def _draws(n: int, dim: int, seed: int):
    rng = np.random.default_rng(seed)
    potential = rng.uniform(size=n ** dim)
    conductivity = rng.uniform(size=(dim, n ** dim)) + 1e-4
    return potential, conductivity


def make_laplacian_potential(n: int, dim: int = 2, seed: int = 0, potential=None,
                             scaled: bool = False, method: str = "direct") -> SparseSolveOracle:
    """``-Laplace_h + diag(1 + W)`` on a periodic grid, ``W ~ U[0,1]`` i.i.d.

    The stencil has unit weights; ``scaled=True`` multiplies it by ``n^2``.
    """
    if potential is None:
        potential, _ = _draws(n, dim, seed)
    L = periodic_laplacian(n, dim) * (n * n if scaled else 1.0)
    A = L + sp.diags(1.0 + np.asarray(potential, dtype=float))
    return SparseSolveOracle(A, method=method)


def conductivity_matrix(n: int, dim: int, conductivity: np.ndarray) -> sp.csr_matrix:
    """``-div(a grad)`` with one coefficient per grid edge ``(p, p + e_axis)``."""
    N = n ** dim
    idx = np.stack(np.unravel_index(np.arange(N), (n,) * dim), axis=1)
    rows, cols, vals = [], [], []
    for axis in range(dim):
        nb = idx.copy()
        nb[:, axis] = (nb[:, axis] + 1) % n
        q = np.ravel_multi_index(tuple(nb.T), (n,) * dim)
        p = np.arange(N)
        a = conductivity[axis]
        rows += [p, q, p, q]
        cols += [p, q, q, p]
        vals += [a, a, -a, -a]
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N))


def _edge_means(n: int, dim: int, node: np.ndarray) -> np.ndarray:
    """Per-axis edge coefficients ``(a_p + a_{p + e_axis}) / 2`` from node values."""
    grid = node.reshape((n,) * dim)
    return np.stack([(0.5 * (grid + np.roll(grid, -1, axis=axis))).ravel() for axis in range(dim)])


def make_rough_conductivity(n: int, dim: int = 2, seed: int = 0, conductivity=None, potential=None,
                            scaled: bool = False, method: str = "direct",
                            placement: str = "edge") -> SparseSolveOracle:
    """Edge conductivities ``Z + 1e-4`` plus the random potential of the smooth case.

    ``placement="node"`` draws one value per grid point instead (the first
    row of the edge draws) and gives each edge the mean of its endpoints.
    """
    pot, cond = _draws(n, dim, seed)
    potential = pot if potential is None else potential
    if placement == "node":
        node = cond[0] if conductivity is None else np.broadcast_to(conductivity, (n ** dim,))
        conductivity = _edge_means(n, dim, np.asarray(node, dtype=float))
    elif placement == "edge":
        conductivity = cond if conductivity is None else np.broadcast_to(conductivity, (dim, n ** dim))
    else:
        raise ValueError(f"unknown conductivity placement {placement!r}")
    K = conductivity_matrix(n, dim, np.asarray(conductivity, dtype=float)) * (n * n if scaled else 1.0)
    oracle = SparseSolveOracle(K + sp.diags(1.0 + np.asarray(potential, dtype=float)), method=method)
    oracle.conductivity = conductivity
    return oracle


def make_fractional(n: int, dim: int = 2, s: float = 1.0, seed: int = 0, scaled: bool = False) -> FFTOracle:
    """Solution operator of ``(-Laplace)^s u + u = f`` with the spectral definition."""
    if not s > 0:
        raise ValueError(f"fractional order must be positive, got {s}")
    lam = laplacian_symbol(n, dim) * (n * n if scaled else 1.0)
    return FFTOracle(n, dim, lam ** s + 1.0)


def load_matrix_oracle(path, method: str = "direct") -> SparseSolveOracle:
    """Matrix Market file holding a symmetric positive definite matrix."""
    try:
        A = scipy.io.mmread(str(path))
    except (OSError, ValueError, IndexError) as exc:
        raise ValueError(f"cannot read Matrix Market file {path}: {exc}") from exc
    A = sp.csr_matrix(A, dtype=float)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix in {path} is not square: {A.shape}")
    scale = max(abs(A).max(), 1e-300)
    if A.nnz and abs(A - A.T).max() > 1e-12 * scale:
        raise ValueError(f"matrix in {path} is not symmetric")
    if not _is_positive_definite(A):
        raise ValueError(f"matrix in {path} is not positive definite")
    return SparseSolveOracle(A, method=method)


def _is_positive_definite(A: sp.csr_matrix) -> bool:
    if A.shape[0] <= 4096:
        try:
            np.linalg.cholesky(A.toarray())
            return True
        except np.linalg.LinAlgError:
            return False
    lmin = spla.eigsh(A, k=1, which="SA", return_eigenvectors=False, tol=1e-8)[0]
    return bool(lmin > 0)


def load_coordinates(path, periodic: bool = False) -> PointSet:
    """Whitespace-delimited coordinates, one row per unknown, mapped into ``[0, 1)^d``.

    Coordinates are shifted to the origin and divided by ``1.000001`` times the
    largest extent, which keeps aspect ratios.
    """
    coords = np.loadtxt(str(path), ndmin=2)
    lo = coords.min(axis=0)
    ext = float((coords.max(axis=0) - lo).max())
    return PointSet((coords - lo) / (ext * 1.000001 if ext > 0 else 1.0), periodic)


def make_oracle(spec: ProblemSpec) -> SolverOracle:
    if spec.kind == "laplace_potential":
        return make_laplacian_potential(spec.n, spec.dim, spec.seed, scaled=spec.scaled)
    if spec.kind == "rough_conductivity":
        return make_rough_conductivity(spec.n, spec.dim, spec.seed, scaled=spec.scaled)
    if spec.kind == "fractional":
        return make_fractional(spec.n, spec.dim, spec.s, spec.seed, scaled=spec.scaled)
    if spec.kind == "matrix_file":
        return load_matrix_oracle(Path(spec.path))
    raise ValueError("dense_test problems are built in memory with dense_test_oracle")
