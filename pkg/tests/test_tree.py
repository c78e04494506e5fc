from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from treegibbs.oracle import ball_edges, exact_connected_count
from treegibbs.tree import (BallGeometry, ConfigWindow, GeometryError, GuardExceeded, attached_edges, branch_plan,
                            broken_bonds, connected_counts, default_spacing, entropy_bound, enumerate_connected,
                            ray_vertex)


def test_sphere_and_ball_sizes():
    g = BallGeometry(2)
    assert [g.sphere_size(k) for k in range(5)] == [1, 3, 6, 12, 24]
    assert g.ball_size(3) == 22
    assert g.offset(3) == 10
    assert g.ray(3) == 10


def test_level_order_matches_bfs_numbering():
    # the oracle builds its own breadth-first ball; parent pointers must agree
    for d in (2, 3):
        n_all, edges = ball_edges(d, 4)
        g = BallGeometry(d, 4)
        assert n_all == g.ball_size(4)
        for p, c in edges:
            assert g.parent(c) == p
            assert c in g.children(p)


@given(st.integers(2, 4), st.integers(0, 3000))
def test_parent_child_inverse(d, v):
    g = BallGeometry(d)
    for c in range(g.n_children(v)):
        w = g.child(v, c)
        assert g.parent(w) == v
        assert g.child_index(w) == c
        assert g.level(w) == g.level(v) + 1


@given(st.integers(2, 4), st.integers(0, 3000))
def test_address_roundtrip(d, v):
    g = BallGeometry(d)
    assert g.parse_address(g.address_string(v)) == v


def test_address_errors():
    g = BallGeometry(2)
    with pytest.raises(GeometryError):
        g.parse_address("1.0")
    with pytest.raises(GeometryError):
        g.parse_address("0.1.2")


def test_vectorised_parent_and_level():
    g = BallGeometry(3)
    v = np.arange(200)
    assert np.array_equal(g.parent(v), [g.parent(int(x)) for x in v])
    assert np.array_equal(g.level(v), [g.level(int(x)) for x in v])


@given(st.integers(2, 3), st.integers(0, 500), st.integers(0, 500))
def test_distance_is_metric(d, a, b):
    g = BallGeometry(d)
    assert g.distance(a, b) == g.distance(b, a)
    assert (g.distance(a, b) == 0) == (a == b)
    assert g.distance(a, 0) == g.level(a)


def test_neighbors_respect_depth():
    g = BallGeometry(2, 1)
    assert g.neighbors(0) == [1, 2, 3]
    assert g.neighbors(1) == [0]
    assert BallGeometry(2).neighbors(1) == [0, 4, 5]


def test_deep_addressing_does_not_overflow():
    g = BallGeometry(2)
    v = g.ray(55)
    assert g.level(v) == 55
    assert g.parent(g.child(v, 1)) == v


def test_config_window_validation():
    w = ConfigWindow([3, 1, 2], [0, 1, 1])
    assert w.spin([1, 3]).tolist() == [1, 0]
    with pytest.raises(GeometryError):
        w.spin([4])
    with pytest.raises(GeometryError):
        ConfigWindow([1, 1], [0, 0])
    with pytest.raises(GeometryError):
        ConfigWindow([1, 2], [0])
    with pytest.raises(GeometryError):
        w.check_q(1)


def test_config_window_batched():
    w = ConfigWindow([0, 1], np.array([[0, 1], [1, 1]]))
    assert w.spin([1]).tolist() == [[1], [1]]


def test_connected_counts_known_values():
    assert connected_counts(2, 6) == [1, 3, 9, 28, 90, 297]
    assert connected_counts(3, 6) == [1, 4, 18, 88, 455, 2448]


@pytest.mark.parametrize("d", [2, 3])
def test_enumeration_matches_generating_function_and_bfs(d):
    g = BallGeometry(d)
    sets = list(enumerate_connected(g, 0, 5))
    assert len(sets) == len(set(sets))
    sizes = np.bincount([len(s) for s in sets])[1:]
    assert sizes.tolist() == connected_counts(d, 5)
    assert sizes.tolist() == [exact_connected_count(d, k) for k in range(1, 6)]


@given(st.integers(2, 3), st.integers(1, 6))
def test_entropy_bound_holds(d, size):
    assert connected_counts(d, size)[-1] <= entropy_bound(d, size)


def test_enumeration_is_translation_invariant_off_root():
    g = BallGeometry(2)
    assert len(list(enumerate_connected(g, 57, 4))) == sum(connected_counts(2, 4))


def test_enumeration_guard():
    with pytest.raises(GuardExceeded):
        list(enumerate_connected(BallGeometry(3), 0, 8, guard=100))


def test_enumeration_inside_finite_ball():
    g = BallGeometry(2, 1)
    sets = list(enumerate_connected(g, 0, 10))
    # subsets of the three leaves, each joined to the root
    assert len(sets) == 8


def test_attached_edges_and_broken_bonds():
    g = BallGeometry(2)
    e = attached_edges(g, [0, 1])
    assert len(e) == 5  # root: 3 edges, vertex 1: parent edge (shared) + 2 children
    verts = np.unique(np.array(e))
    spins = np.zeros(len(verts), dtype=int)
    spins[verts.tolist().index(4)] = 1
    w = ConfigWindow(verts, spins)
    assert broken_bonds(w, e) == 1


def test_branch_plan_default_spacing():
    assert [default_spacing(i) for i in range(1, 10)] == [2, 2, 2, 2, 4, 4, 4, 4, 8]
    plan = branch_plan(default_spacing, 2, BallGeometry(2, 14))
    assert plan.depths == (0, 2, 4, 6)
    assert plan.size == 4 and plan.prefix(1) == plan.vertices[:1]
    with pytest.raises(GeometryError):
        branch_plan(default_spacing, 3, BallGeometry(2, 14))


def test_branch_plan_custom_branch():
    g = BallGeometry(2, 10)
    plan = branch_plan([1, 1, 1], 2, g, branch=(2, 1, 0))
    assert plan.vertices[1] == ray_vertex(g, 1, (2,))
    assert g.address_string(plan.vertices[3]) == "0.2.1.0"
