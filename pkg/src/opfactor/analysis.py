"""Error estimation and experiment drivers (rho sweeps, low-rank curves)."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .basis import MultiresBasis, build_haar_basis
from .coloring import Coloring, aggregate_supernodes, color_simplicial, color_supernodal
from .geometry import PointSet, build_general_partition, build_regular_partition
from .measurement import observe
from .oracles import ProblemSpec, SolverOracle, load_coordinates, make_oracle
from .recovery import Pattern, SparseFactor, _recover, build_pattern, dense_theta

CSV_HEADER = ("rho", "matvecs", "rel_err")


def _power(apply, n: int, iters: int, rng) -> float:
    """Largest |eigenvalue| of a symmetric operator, ``||A x||`` at the last normalized iterate."""
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(iters):
        y = apply(x)
        est = float(np.linalg.norm(y))
        if est == 0.0:
            return 0.0
        x = y / est
    return est


def estimate_rel_error(oracle: SolverOracle, basis: MultiresBasis, F: SparseFactor,
                       iters: int = 100, seed: int = 0) -> tuple[float, float, float]:
    """Power-iteration estimate of ``||Theta - L L^T|| / ||Theta||``.

    Each step on ``E = Theta - L L^T`` costs one oracle call and one factor
    product.  Returns ``(rel_err, norm_theta, norm_E)``.
    """
    if iters < 1:
        raise ValueError("need at least one power iteration")

    def theta(x):
        return basis.W.T @ oracle.apply(basis.W @ x)

    # same start vector for both runs, so that L = 0 gives exactly 1
    norm_t = _power(theta, basis.n, iters, np.random.default_rng(seed))
    norm_e = _power(lambda x: theta(x) - F.matvec(x), basis.n, iters, np.random.default_rng(seed))
    return norm_e / norm_t, norm_t, norm_e


def dense_rel_error(theta: np.ndarray, F: SparseFactor) -> float:
    """Exact spectral-norm relative error against a dense ``Theta``."""
    E = theta - F.dense()
    return float(np.abs(np.linalg.eigvalsh(E)).max() / np.abs(np.linalg.eigvalsh(theta)).max())


# ---------------------------------------------------------------------------
# problem assembly


def _levels_for(points: PointSet, h: float) -> int:
    from scipy.spatial import cKDTree
    if points.n < 2:
        return 1
    tree = cKDTree(points.coords, boxsize=1.0 if points.periodic else None)
    spacing = float(tree.query(points.coords, k=2)[0][:, 1].min())
    q = int(np.ceil(np.log(spacing / min(0.5, 1.0 - h)) / np.log(h)))
    return max(1, q)


def build_problem(spec: ProblemSpec, coords: str | None = None, h: float = 0.5):
    """Oracle and multiresolution basis for a problem description."""
    oracle = make_oracle(spec)
    if spec.kind in ("laplace_potential", "rough_conductivity", "fractional"):
        tree = build_regular_partition((spec.n,) * spec.dim, periodic=True)
    else:
        path = coords or spec.coords
        if path is None:
            raise ValueError("matrix problems need a coordinates file")
        points = load_coordinates(path)
        if points.n != oracle.n:
            raise ValueError(f"{path} has {points.n} points but the matrix has dimension {oracle.n}")
        q = _levels_for(points, h)
        while True:
            try:
                tree = build_general_partition(points, h, q)
                break
            except ValueError:
                if q == 1:
                    raise
                q -= 1
    return oracle, build_haar_basis(tree)


def make_coloring(basis: MultiresBasis, rho: float, mode: str = "simplicial") -> Coloring:
    if mode == "simplicial":
        return color_simplicial(basis, rho)
    if mode == "supernodal":
        return color_supernodal(aggregate_supernodes(basis, rho), basis, rho)
    raise ValueError(f"unknown mode {mode!r}")


def run_pipeline(oracle: SolverOracle, basis: MultiresBasis, rho: float, mode: str = "simplicial",
                 threads: int = 1, rule: str = "row") -> tuple[SparseFactor, Pattern]:
    coloring = make_coloring(basis, rho, mode)
    obs = observe(oracle, basis, coloring, threads=threads)
    pattern = build_pattern(coloring, basis, rule)
    return _recover(obs, pattern, threads, supernodal=coloring.supernodal), pattern


# ---------------------------------------------------------------------------
# experiments


@dataclass
class ExperimentConfig:
    problem: ProblemSpec = field(default_factory=ProblemSpec)
    rhos: tuple = (4.0,)
    mode: str = "simplicial"
    color_prefix: int | None = None
    seed: int = 0
    eval_iters: int = 100
    estimator: str = "power"   # or "dense" (exact, small N only)
    threads: int = 1
    out: str | None = None
    coords: str | None = None

    def __post_init__(self):
        rhos = tuple(float(r) for r in self.rhos)
        if not rhos or any(not r > 0 for r in rhos):
            raise ValueError("rho values must be positive")
        if any(b <= a for a, b in zip(rhos, rhos[1:])):
            raise ValueError("rho values must be strictly ascending")
        if self.eval_iters < 1:
            raise ValueError("eval_iters must be >= 1")
        if self.estimator not in ("power", "dense"):
            raise ValueError(f"unknown estimator {self.estimator!r}")
        self.rhos = rhos


def _error(cfg: ExperimentConfig, oracle, basis, F, theta=None) -> float:
    if cfg.estimator == "dense":
        return dense_rel_error(theta, F)
    return estimate_rel_error(oracle, basis, F, cfg.eval_iters, cfg.seed)[0]


def format_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def run_experiment(cfg: ExperimentConfig) -> list[tuple[float, int, float]]:
    """One row ``(rho, matvecs, rel_err)`` per rho; matvecs counts recovery calls only."""
    oracle, basis = build_problem(cfg.problem, cfg.coords)
    theta = dense_theta(oracle, basis) if cfg.estimator == "dense" else None
    rows = []
    for rho in cfg.rhos:
        F, _ = run_pipeline(oracle, basis, rho, cfg.mode, cfg.threads)
        rows.append((rho, int(F.matvecs), _error(cfg, oracle, basis, F, theta)))
    if cfg.out:
        Path(cfg.out).write_text(format_csv(CSV_HEADER, rows))
    return rows


def run_lowrank(cfg: ExperimentConfig, ks=None) -> list[tuple[int, float]]:
    """Error of the leading-``k``-column truncations of one recovered factor.

    By default ``k`` runs over the color boundaries at the end of every level.
    """
    oracle, basis = build_problem(cfg.problem, cfg.coords)
    F, pattern = run_pipeline(oracle, basis, cfg.rhos[-1], cfg.mode, cfg.threads)
    if ks is None:
        ks = level_cuts(F, pattern, basis)
        if cfg.color_prefix is not None:
            ks = [int(pattern.block_start[pattern.color_blocks[cfg.color_prefix]])]
    theta = dense_theta(oracle, basis) if cfg.estimator == "dense" else None
    rows = [(int(k), _error(cfg, oracle, basis, F.truncate(int(k)), theta)) for k in ks]
    if cfg.out:
        Path(cfg.out).write_text(format_csv(("k", "rel_err"), rows))
    return rows


def level_cuts(F: SparseFactor, pattern: Pattern, basis: MultiresBasis) -> list[int]:
    """Column counts after each complete level (excluding the full factor)."""
    lv = basis.level[pattern.order]
    return [int(np.searchsorted(lv, k, side="right")) for k in range(1, basis.q)]
