import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from opfactor.analysis import estimate_rel_error, run_pipeline
from opfactor.basis import build_haar_basis
from opfactor.coloring import (Coloring, SupernodeSet, aggregate_supernodes, color_simplicial, color_supernodal,
                               singleton_supernodes)
from opfactor.geometry import PointSet, build_general_partition
from opfactor.measurement import observe
from opfactor.oracles import dense_test_oracle
from opfactor.recovery import (NotPositiveDefiniteError, SparseFactor, build_pattern, cholesky_recover,
                               load_factor, recover, save_factor, scatter_simplicial, scatter_supernodal,
                               supernodal_cholesky_recover, truncate_low_rank, truncate_to_pattern)

from conftest import grid_basis, grid_problem, spectral_rel_error


def theta_oracle(basis, theta):
    """Oracle whose Theta in ``basis`` is exactly ``theta``."""
    W = basis.W.toarray()
    return dense_test_oracle(W @ theta @ W.T, inverse=True)


def recover_from_theta(basis, theta, coloring):
    return recover(observe(theta_oracle(basis, theta), basis, coloring), basis)


def ordered(F, theta):
    return theta[np.ix_(F.perm, F.perm)]


def test_identity():
    b = grid_basis(8)
    F = recover_from_theta(b, np.eye(b.n), color_simplicial(b, np.inf))
    assert abs(F.L - sp.identity(b.n)).max() < 1e-14


def test_two_by_two():
    b = grid_basis(2, 1)
    theta = np.array([[4.0, 2.0], [2.0, 3.0]])
    F = recover_from_theta(b, theta, color_simplicial(b, np.inf))
    assert np.allclose(F.L.toarray(), [[2, 0], [1, np.sqrt(2)]], atol=1e-14)
    assert np.allclose(F.matvec(np.array([1.0, 0.0])), [4, 2])
    assert F.entry(1, 1) == pytest.approx(3)
    assert F.logdet() == pytest.approx(np.log(8))


def test_exactness_limit_256(problem16):
    oracle, b, theta = problem16
    F = cholesky_recover(observe(oracle, b, color_simplicial(b, np.inf)), b)
    assert spectral_rel_error(theta, F.dense()) <= 1e-10
    exact = np.linalg.cholesky(ordered(F, theta))
    assert np.abs(F.L.toarray() - exact).max() <= 1e-10 * np.abs(exact).max()


@pytest.mark.parametrize("rho", [1.5, 2.0, 3.0])
def test_exactly_sparse_fixed_point(problem16, rho):
    _, b, theta = problem16
    col = color_simplicial(b, rho)
    pat = build_pattern(col, b)
    L0 = truncate_to_pattern(np.linalg.cholesky(theta[np.ix_(pat.order, pat.order)]), pat)
    theta_bar = np.empty_like(theta)
    theta_bar[np.ix_(pat.order, pat.order)] = (L0 @ L0.T).toarray()
    F = recover_from_theta(b, theta_bar, col)
    assert abs(F.L - L0).max() <= 1e-10 * abs(L0).max()


@settings(max_examples=15, deadline=None)
@given(n=st.integers(3, 40), seed=st.integers(0, 10 ** 6), rho=st.floats(0.3, 4.0))
def test_exactly_sparse_random_trees(n, seed, rho):
    rng = np.random.default_rng(seed)
    try:
        tree = build_general_partition(PointSet(rng.uniform(size=(n, 2)) * 0.999), 0.5, 3)
    except ValueError:
        return
    b = build_haar_basis(tree)
    col = color_simplicial(b, rho)
    pat = build_pattern(col, b)
    G = rng.standard_normal((b.n, b.n))
    L0 = truncate_to_pattern(np.linalg.cholesky(G @ G.T + b.n * np.eye(b.n)), pat)
    theta_bar = np.empty((b.n, b.n))
    theta_bar[np.ix_(pat.order, pat.order)] = (L0 @ L0.T).toarray()
    F = recover_from_theta(b, theta_bar, col)
    assert abs(F.L - L0).max() <= 1e-10 * abs(L0).max()


def test_pattern_column_contents():
    b = grid_basis(16)
    col = color_simplicial(b, 2.0)
    pat = build_pattern(col, b)
    for p in range(0, b.n, 17):
        rows = pat.indices[pat.indptr[p]:pat.indptr[p + 1]]
        assert rows[0] == p and np.all(np.diff(rows) > 0)


def test_monotone_in_rho():
    oracle, b, theta = grid_problem(32)
    errs = []
    for rho in (3, 4, 5, 6, 7):
        F, _ = run_pipeline(oracle, b, rho)
        errs.append(max(spectral_rel_error(theta, F.dense()), 1e-16))
    assert all(e2 <= 2 * e1 for e1, e2 in zip(errs, errs[1:]))
    assert np.polyfit([3, 4, 5, 6, 7], np.log(errs), 1)[0] < 0


def test_nonpositive_pivot_aborts():
    b = grid_basis(2, 1)
    with pytest.raises(NotPositiveDefiniteError, match="increase rho") as info:
        recover_from_theta(b, np.array([[1.0, 2.0], [2.0, 1.0]]), color_simplicial(b, np.inf))
    assert info.value.index == 1 and info.value.value < 0


def test_threads_match_sequential(problem16):
    oracle, b, _ = problem16
    for mode in ("simplicial", "supernodal"):
        a, _ = run_pipeline(oracle, b, 2.0, mode, threads=1)
        c, _ = run_pipeline(oracle, b, 2.0, mode, threads=4)
        assert np.abs(a.L.data - c.L.data).max() <= 1e-13 * np.abs(a.L.data).max()


# --- scatter ---------------------------------------------------------------


def test_scatter_single_member_color():
    b = grid_basis(8)
    col = color_simplicial(b, np.inf)
    u = np.arange(b.n, dtype=float) + 1
    c = 10
    S = scatter_simplicial(u, col, c, b).toarray()
    j = col.colors[c][0]
    order = col.basis_order()
    later = order[list(order).index(j):]
    assert S.shape == (b.n, 1)
    assert np.array_equal(np.flatnonzero(S[:, 0]), np.sort(later))


def test_scatter_nearest_member():
    b = grid_basis(16)
    col = color_simplicial(b, 1.0)
    c = int(np.argmax([len(x) for x in col.colors]))
    members = col.colors[c]
    u = np.zeros(b.n)
    lo, hi = b.support_box(np.arange(b.n))
    near_first = [i for i in range(b.n) if b.level[i] > col.levels[c]
                  and np.all(lo[i] >= lo[members[0]]) and np.all(hi[i] <= hi[members[0]])]
    u[near_first] = 1.0
    S = scatter_simplicial(u, col, c, b).toarray()
    assert np.array_equal(np.flatnonzero(S[:, 0]), np.sort(near_first))
    assert S[:, 1:].sum() == 0


@settings(max_examples=10, deadline=None)
@given(rho=st.floats(0.5, 4.0), seed=st.integers(0, 1000))
def test_scatter_partition_property(rho, seed):
    b = grid_basis(16)
    col = color_simplicial(b, rho)
    u = np.random.default_rng(seed).standard_normal(b.n)
    c = seed % len(col)
    S = scatter_simplicial(u, col, c, b)
    order = col.basis_order()
    pos = np.empty(b.n, dtype=int)
    pos[order] = np.arange(b.n)
    rows = np.flatnonzero(pos >= pos[col.colors[c][0]])
    assert np.allclose(np.asarray(S.sum(axis=1)).ravel()[rows], u[rows])
    assert np.all(np.diff(S.tocsr().indptr)[rows] == 1)


def test_supernodal_scatter_partition_and_blocks():
    b = grid_basis(16)
    sn = aggregate_supernodes(b, 1.5)
    col = color_supernodal(sn, b, 1.5)
    c = int(np.argmax([len(x) for x in col.colors]))
    width = int(sn.sizes()[col.colors[c]].max())
    U = np.random.default_rng(0).standard_normal((b.n, width))
    S = scatter_supernodal(U, col, c, b).tocsr()
    offs = np.concatenate([[0], np.cumsum(sn.sizes()[col.colors[c]])])
    for j, s in enumerate(col.colors[c]):
        blk = S[:, offs[j]:offs[j + 1]].toarray()
        rows = np.flatnonzero(np.abs(blk).sum(axis=1))
        assert np.allclose(blk[rows], U[rows, :offs[j + 1] - offs[j]])
        assert set(sn.of(s)) <= set(rows)
    # each row lands in exactly one column block
    owner = np.zeros(b.n, dtype=int)
    for j in range(len(col.colors[c])):
        owner += np.abs(S[:, offs[j]:offs[j + 1]]).sum(axis=1).A1 > 0
    assert owner.max() == 1


def test_single_supernode_color_takes_all_later_rows():
    b = grid_basis(8)
    sn = aggregate_supernodes(b, 100.0)
    col = color_supernodal(sn, b, 100.0)
    S = scatter_supernodal(np.ones((b.n, 48)), col, 1, b)
    assert set(S.nonzero()[0]) == set(range(b.level_offsets[1], b.n))


# --- supernodal ------------------------------------------------------------


def test_singleton_supernodes_reproduce_simplicial(problem16):
    oracle, b, _ = problem16
    col = color_simplicial(b, 2.0)
    F = cholesky_recover(observe(oracle, b, col), b)
    scol = Coloring(col.colors, col.levels, col.rho, singleton_supernodes(b))
    G = supernodal_cholesky_recover(observe(oracle, b, scol), b)
    assert np.array_equal(F.perm, G.perm)
    assert np.array_equal(F.L.indices, G.L.indices)
    assert np.array_equal(F.L.data, G.L.data)


def test_block_diagonal_theta():
    b = grid_basis(4, 1)
    rng = np.random.default_rng(0)
    blocks = []
    for _ in range(2):
        G = rng.standard_normal((2, 2))
        blocks.append(G @ G.T + 2 * np.eye(2))
    theta = np.zeros((4, 4))
    theta[:2, :2], theta[2:, 2:] = blocks
    sn = SupernodeSet(np.array([1, 2]), np.zeros((2, 1)), np.array([0, 2, 4]), np.arange(4), np.array([0, 0, 1, 1]))
    col = Coloring([np.array([0]), np.array([1])], np.array([1, 2]), np.inf, sn)
    F = supernodal_cholesky_recover(observe(theta_oracle(b, theta), b, col), b)
    L = F.L.toarray()
    assert np.allclose(L[:2, :2], np.linalg.cholesky(blocks[0]))
    assert np.allclose(L[2:, 2:], np.linalg.cholesky(blocks[1]))
    assert np.allclose(L[2:, :2], 0)


def test_supernodal_exact_at_large_rho(problem16):
    oracle, b, theta = problem16
    F, _ = run_pipeline(oracle, b, np.inf, "supernodal")
    assert spectral_rel_error(theta, F.dense()) <= 1e-10


def test_supernodal_close_to_simplicial_64():
    oracle, b, theta = grid_problem(64)
    errs = {}
    for mode in ("simplicial", "supernodal"):
        F, _ = run_pipeline(oracle, b, 5.0, mode)
        errs[mode] = estimate_rel_error(oracle, b, F, iters=60, seed=0)[0]
    assert errs["supernodal"] <= 10 * errs["simplicial"]


def test_wrong_mode_rejected(problem16):
    oracle, b, _ = problem16
    obs = observe(oracle, b, color_simplicial(b, 2.0))
    with pytest.raises(ValueError):
        supernodal_cholesky_recover(obs, b)


# --- factor queries ----------------------------------------------------------


@pytest.fixture(scope="module")
def factor16():
    oracle, b, theta = grid_problem(16)
    F, pat = run_pipeline(oracle, b, 2.0)
    return F, pat, b, theta


def test_truncation_extremes(factor16):
    F, pat, _, _ = factor16
    assert abs(truncate_low_rank(F, k=F.n).L - F.L).max() == 0
    Z = truncate_low_rank(F, k=0)
    assert Z.L.nnz == 0 and Z.rank == 0
    assert truncate_low_rank(F, colors=len(pat.color_blocks) - 1, pattern=pat).L.nnz == F.L.nnz
    with pytest.raises(ValueError):
        F.truncate(F.n + 1)


def test_truncated_factor_refuses_solve_and_logdet(factor16):
    Z = factor16[0].truncate(3)
    with pytest.raises(ValueError):
        Z.logdet()
    with pytest.raises(ValueError):
        Z.solve(np.ones(Z.n))


def test_entry_query_matches_dense(factor16):
    F = factor16[0]
    D = F.dense()
    rng = np.random.default_rng(0)
    for i, j in rng.integers(0, F.n, size=(50, 2)):
        assert abs(F.entry(i, j) - D[i, j]) <= 1e-12 * np.abs(D).max()
        e = np.zeros(F.n)
        e[j] = 1
        assert abs(F.entry(i, j) - F.matvec(e)[i]) <= 1e-12 * np.abs(D).max()


def test_solve_round_trip(factor16):
    F = factor16[0]
    x = np.random.default_rng(1).standard_normal(F.n)
    assert np.abs(F.solve(F.matvec(x)) - x).max() <= 1e-10 * np.abs(x).max()


def test_logdet_examples():
    I = SparseFactor(sp.identity(3, format="csc"), np.arange(3))
    assert I.logdet() == 0
    D = SparseFactor(sp.diags([2.0, np.sqrt(2)], format="csc"), np.arange(2))
    assert D.logdet() == pytest.approx(3 * np.log(2))


def test_sample_covariance_small():
    rng = np.random.default_rng(3)
    G = rng.standard_normal((4, 4))
    L = np.linalg.cholesky(G @ G.T + np.eye(4))
    F = SparseFactor(sp.csc_matrix(L), np.array([2, 0, 3, 1]))
    X = F.sample(seed=0, size=10 ** 4)
    C = F.dense()
    scale = np.sqrt(np.outer(np.diag(C), np.diag(C)))
    assert np.all(np.abs(np.cov(X, bias=True) - C) <= 0.05 * scale)
    assert np.array_equal(F.sample(seed=5), F.sample(seed=5))


def test_original_basis_factor(factor16):
    F, _, b, theta = factor16
    LW = F.in_original_basis(b).toarray()
    W = b.W.toarray()
    assert np.allclose(LW @ LW.T, W @ F.dense() @ W.T, atol=1e-12)


def test_factor_file_round_trip(factor16, tmp_path):
    F = factor16[0]
    save_factor(F, tmp_path / "a.bin")
    G = load_factor(tmp_path / "a.bin")
    save_factor(G, tmp_path / "b.bin")
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    assert np.array_equal(G.L.data, F.L.data) and np.array_equal(G.perm, F.perm)
    assert (G.rho, G.supernodal, G.matvecs) == (F.rho, F.supernodal, F.matvecs)


def test_factor_file_rejects_garbage(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"not a factor")
    with pytest.raises(ValueError):
        load_factor(tmp_path / "x.bin")
    F = SparseFactor(sp.identity(2, format="csc"), np.arange(2))
    save_factor(F, tmp_path / "y.bin")
    (tmp_path / "z.bin").write_bytes((tmp_path / "y.bin").read_bytes()[:-3])
    with pytest.raises(ValueError, match="bytes"):
        load_factor(tmp_path / "z.bin")
