import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from opfactor.geometry import (PointSet, box_gap, build_general_partition, build_regular_partition,
                               cell_distance, torus_distance)


def member_sets(tree, k):
    return sorted(tuple(sorted(tree.members(k, c))) for c in range(tree.num_cells(k)))


def test_pointset_validation():
    with pytest.raises(ValueError):
        PointSet(np.array([[1.0]]))
    with pytest.raises(ValueError):
        PointSet(np.zeros((3, 4)))
    with pytest.raises(ValueError):
        PointSet(np.zeros((0, 2)))
    ps = PointSet(np.array([0.1, 0.5]))
    assert ps.n == 2 and ps.dim == 1


def test_regular_1d_four_points():
    tree = build_regular_partition(4)
    assert tree.q == 2 and tree.h == 0.5
    assert member_sets(tree, 1) == [(0, 1), (2, 3)]
    assert member_sets(tree, 2) == [(0,), (1,), (2,), (3,)]
    tree.check()


def test_regular_2x2_single_level():
    tree = build_regular_partition((2, 2))
    assert tree.q == 1
    assert tree.num_cells(1) == 4
    assert np.all(tree.radii[1] == 0)


def test_regular_64_cell_counts():
    tree = build_regular_partition((64, 64))
    assert tree.q == 6
    assert [tree.num_cells(k) for k in range(1, 7)] == [4 ** k for k in range(1, 7)]
    tree.check()
    assert np.all(tree.sizes(6) == 1)


@pytest.mark.parametrize("dims, axis", [((6, 6), 0), ((8, 12), 1), ((8, 4), 1), ((8, 8, 3), 2)])
def test_regular_rejects_bad_axes(dims, axis):
    with pytest.raises(ValueError, match=f"axis {axis}"):
        build_regular_partition(dims)


def test_general_matches_regular_on_equispaced_points():
    pts = PointSet(np.arange(4)[:, None] / 4.0)
    gen = build_general_partition(pts, 0.5, 2)
    reg = build_regular_partition(4)
    for k in (1, 2):
        assert member_sets(gen, k) == member_sets(reg, k)


def test_general_single_point_chain():
    tree = build_general_partition(PointSet(np.array([[0.3, 0.3]])), 0.5, 3)
    for k in range(1, tree.q + 1):
        assert tree.num_cells(k) == 1


def test_general_random_points_invariants():
    rng = np.random.default_rng(0)
    tree = build_general_partition(PointSet(rng.uniform(size=(100, 2))), 0.5, 3)
    tree.check()
    assert np.all(tree.sizes(tree.q) == 1)


def test_general_rejects_too_many_levels():
    pts = PointSet(np.arange(4)[:, None] / 4.0)
    with pytest.raises(ValueError, match="too large"):
        build_general_partition(pts, 0.5, 4)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 60), dim=st.integers(1, 3), periodic=st.booleans(), seed=st.integers(0, 10 ** 6),
       q=st.integers(1, 4))
def test_general_partition_invariants(n, dim, periodic, seed, q):
    coords = np.random.default_rng(seed).uniform(size=(n, dim)) * 0.999
    try:
        tree = build_general_partition(PointSet(coords, periodic), 0.5, q)
    except ValueError:
        return
    tree.check()
    # cover: every level partitions all points
    for k in range(tree.q + 1):
        assert sorted(np.concatenate([tree.members(k, c) for c in range(tree.num_cells(k))])) == list(range(n))


def test_cell_distance_examples():
    line = PointSet(np.array([[0.1], [0.4], [0.05], [0.95]]))
    assert cell_distance(line, [0], [1]) == pytest.approx(0.3)
    assert cell_distance(line, [2], [3], periodic=True) == pytest.approx(0.1)
    plane = PointSet(np.array([[0.0, 0.0], [0.25, 0.0], [0.75, 0.0]]))
    assert cell_distance(plane, [0, 1], [2]) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        cell_distance(plane, [], [2])


def test_cell_distance_pseudometric():
    tree = build_regular_partition((8, 8))
    cells = [tree.members(2, c) for c in range(tree.num_cells(2))]
    d = np.array([[cell_distance(tree.points, a, b) for b in cells] for a in cells])
    assert np.allclose(d, d.T)
    assert np.allclose(np.diag(d), 0)
    for i, j, k in itertools.product(range(0, 16, 3), repeat=3):
        # triangle inequality up to the diameter of the middle cell (cells are sets, not points)
        assert d[i, k] <= d[i, j] + d[j, k] + 2 * tree.radii[2][j] + 1e-12


def test_box_gap_equals_grid_distance():
    tree = build_regular_partition((16, 16))
    k = 3
    lo, hi = tree.lo[k], tree.hi[k]
    for a, b in [(0, 5), (3, 60), (10, 10), (7, 56)]:
        exact = cell_distance(tree.points, tree.members(k, a), tree.members(k, b))
        assert box_gap(lo[a], hi[a], lo[b], hi[b], True) == pytest.approx(exact, abs=1e-14)


@given(st.lists(st.floats(0, 0.999), min_size=2, max_size=2), st.lists(st.floats(0, 0.999), min_size=2, max_size=2))
def test_torus_distance_symmetric_and_bounded(a, b):
    d = torus_distance(np.array(a), np.array(b), True)
    assert d == pytest.approx(torus_distance(np.array(b), np.array(a), True))
    assert d <= np.sqrt(2) / 2 + 1e-12
    assert d <= torus_distance(np.array(a), np.array(b), False) + 1e-15
