import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from svcforecast.errors import DegenerateGraphError, DimensionError, ValidationError
from svcforecast.graph import GraphSnapshot, add_self_loops, adjacency, align_to_vocabulary, normalize, propagation_operator, scale_edges


def snap(n, edges=(), index=0, ids=None):
    ids = ids or tuple(f"s{i}" for i in range(n))
    return GraphSnapshot(index, index * 60, ids, edges, np.zeros((n, 4)))


def test_adjacency_without_edges_is_zero():
    np.testing.assert_array_equal(adjacency(snap(3)), np.zeros((3, 3)))


def test_adjacency_max_mirrors_single_edge():
    a = adjacency(snap(2, [(0, 1, 2.0)]), "max")
    assert a[0, 1] == a[1, 0] == 2.0


def test_adjacency_sum_adds_both_directions():
    a = adjacency(snap(2, [(0, 1, 1.0), (1, 0, 3.0)]), "sum")
    assert a[0, 1] == a[1, 0] == 4.0


def test_adjacency_drops_self_calls():
    assert adjacency(snap(2, [(1, 1, 5.0)]))[1, 1] == 0.0


def test_snapshot_rejects_bad_edges():
    with pytest.raises(ValidationError):
        snap(2, [(0, 2, 1.0)])
    with pytest.raises(ValidationError):
        snap(2, [(0, 1, -1.0)])


def test_self_loops():
    np.testing.assert_array_equal(add_self_loops(np.zeros((1, 1))), [[1.0]])
    np.testing.assert_array_equal(add_self_loops(np.zeros((3, 3))), np.eye(3))
    np.testing.assert_array_equal(add_self_loops(np.array([[0.0, 1.0], [1.0, 0.0]])), np.ones((2, 2)))
    with pytest.raises(DimensionError):
        add_self_loops(np.zeros((2, 3)))


def test_normalize_hand_cases():
    np.testing.assert_allclose(normalize(np.array([[1.0]])), [[1.0]], atol=1e-12)
    np.testing.assert_allclose(normalize(np.ones((2, 2))), np.full((2, 2), 0.5), atol=1e-12)


def test_normalize_star():
    # hub 0 linked to leaves 1 and 2; degrees 3, 2, 2 after self-loops
    S = propagation_operator(snap(3, [(0, 1, 1.0), (0, 2, 1.0)]))
    r6 = 1 / math.sqrt(6)
    expected = np.array([[1 / 3, r6, r6], [r6, 0.5, 0.0], [r6, 0.0, 0.5]])
    np.testing.assert_allclose(S, expected, atol=1e-12, rtol=0)


def test_normalize_zero_degree():
    with pytest.raises(DegenerateGraphError):
        normalize(np.zeros((2, 2)))


def test_scale_edges():
    a = np.array([[0.0, 4.0], [4.0, 0.0]])
    np.testing.assert_array_equal(scale_edges(a, "max"), [[0, 1], [1, 0]])
    np.testing.assert_array_equal(scale_edges(a, "none"), a)
    np.testing.assert_array_equal(scale_edges(np.zeros((2, 2))), np.zeros((2, 2)))


def test_align_identical_sets():
    _, vocab, presence = align_to_vocabulary([snap(2, index=0), snap(2, index=1)])
    assert vocab == ("s0", "s1")
    assert presence.all()


def test_align_union():
    a = GraphSnapshot(0, 0, ("A", "B"), [(0, 1, 1.0)], np.array([[1.0], [2.0]]))
    b = GraphSnapshot(1, 60, ("B", "C"), [(1, 0, 3.0)], np.array([[3.0], [4.0]]))
    aligned, vocab, presence = align_to_vocabulary([a, b])
    assert vocab == ("A", "B", "C")
    assert presence.tolist() == [[True, True, False], [False, True, True]]
    np.testing.assert_array_equal(aligned[1].features, [[0.0], [3.0], [4.0]])
    assert aligned[1].edges == ((2, 1, 3.0),)


def test_align_single_window_is_identity():
    s = GraphSnapshot(0, 0, ("a", "b"), [(0, 1, 2.0)], np.array([[1.0], [2.0]]))
    aligned, vocab, presence = align_to_vocabulary([s])
    assert aligned[0].edges == s.edges
    np.testing.assert_array_equal(aligned[0].features, s.features)
    assert presence.all()


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1), st.sampled_from(["max", "sum"]))
def test_operator_symmetric_and_spectrally_bounded(n, seed, mode):
    rng = np.random.default_rng(seed)
    edges = [(int(i), int(j), float(rng.uniform(0, 50))) for i in range(n) for j in range(n) if i != j and rng.random() < 0.4]
    S = propagation_operator(snap(n, edges), mode)
    np.testing.assert_allclose(S, S.T, atol=1e-15)
    assert np.max(np.abs(np.linalg.eigvalsh(S))) <= 1 + 1e-9
    assert np.all(S >= 0)
