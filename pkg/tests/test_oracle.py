import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rspmle import Graph, Observation, RspContext, expected_cost, expected_edge_traversals, partition_function
from rspmle.oracle import (
    LengthSums,
    OracleError,
    count_subsequences,
    embeddings_by_positions,
    enumerate_hitting_paths,
    hitting_path_counts,
    oracle_expected_cost,
    oracle_node_visits,
    oracle_observation_likelihood,
    oracle_partition,
    oracle_traversals,
    resistance_distance,
)

from conftest import LN2, random_graph, two_node


def _cycle3():
    rows = []
    for i in range(3):
        for j in range(3):
            if i != j:
                rows.append((i, j, 1.0, 1.0))
    return Graph.from_edges(3, rows)


def test_triangle_two_paths(tri_ctx):
    pe = enumerate_hitting_paths(tri_ctx, 0, 2, 5)
    assert pe.paths == [(0, 2), (0, 1, 2)]
    assert oracle_partition(pe) == pytest.approx(0.375)
    assert oracle_expected_cost(pe) == pytest.approx(4 / 3)
    assert oracle_traversals(pe)[(0, 1)] == pytest.approx(1 / 3)
    assert oracle_node_visits(pe, 3) == pytest.approx([1.0, 1 / 3, 0.0])
    assert pe.tail_bound == 0.0


def test_two_node_single_path():
    pe = enumerate_hitting_paths(RspContext(two_node(), 1.0), 0, 1, 4)
    assert pe.paths == [(0, 1)]
    assert oracle_partition(pe) == pytest.approx(math.exp(-1.0))


def test_cycle_counts_match_adjacency_powers():
    ctx = RspContext(_cycle3(), 1.0)
    pe = enumerate_hitting_paths(ctx, 0, 2, 8)
    lengths = np.bincount([len(p) - 1 for p in pe.paths], minlength=9)
    assert np.array_equal(lengths, hitting_path_counts(ctx, 0, 2, 8))
    # length k paths bounce between 0 and 1 before the final step
    assert list(lengths[1:5]) == [1, 1, 1, 1]


def test_enumeration_cap():
    ctx = RspContext(_cycle3(), 1.0)
    with pytest.raises(OracleError):
        enumerate_hitting_paths(ctx, 0, 2, 30, cap=5)
    with pytest.raises(ValueError):
        enumerate_hitting_paths(ctx, 0, 2, 0)


def test_counting_example():
    path = [(1, 2), (2, 3), (3, 2), (2, 3), (3, 4)]
    assert count_subsequences(path, [(1, 2), (2, 3)]) == 2
    assert len(embeddings_by_positions(path, [(1, 2), (2, 3)])) == 2


@given(st.lists(st.integers(0, 3), max_size=9), st.lists(st.integers(0, 3), max_size=3))
def test_count_subsequences_matches_explicit(seq, pat):
    assert count_subsequences(seq, pat) == len(embeddings_by_positions(seq, pat))


def test_one_edge_oracle_triangle(tri_ctx):
    pe = enumerate_hitting_paths(tri_ctx, 0, 2, 5)
    got = [oracle_observation_likelihood(pe, Observation(0, 2, "edges", (e,)), "given") for e in [(0, 2), (0, 1), (1, 2)]]
    assert got == pytest.approx([2 / 3, 1 / 6, 1 / 6])


def test_touching_target_is_zero():
    g = Graph.from_edges(3, [(0, 1, 1, 1), (1, 2, 1, 1), (2, 1, 1, 1), (1, 0, 1, 1)])
    pe = enumerate_hitting_paths(RspContext(g, 1.0), 0, 2, 6)
    # no hitting path can use an edge out of t
    assert all(2 not in p[:-1] for p in pe.paths)


@given(st.integers(3, 7), st.integers(0, 2**32 - 1))
def test_random_walk_normalization(n, seed):
    g = random_graph(np.random.default_rng(seed), n)
    ctx = RspContext(g, 1e-8)
    ls = LengthSums(ctx, n - 1, rel_tail=1e-13)
    assert ls.partition(0) == pytest.approx(1.0 - ls.tail_mass(0), abs=1e-6)
    pe = enumerate_hitting_paths(ctx, 0, n - 1, 6)
    assert oracle_partition(pe) <= 1.0 and oracle_partition(pe) + pe.tail_bound >= 1.0 - 1e-6


@given(st.integers(3, 8), st.integers(0, 2**32 - 1), st.sampled_from([0.01, 1.0, 5.0]))
def test_rsp_core_agrees_with_length_sums(n, seed, beta):
    g = random_graph(np.random.default_rng(seed), n)
    ctx = RspContext(g, beta)
    t = n - 1
    ls = LengthSums(ctx, t)
    z = partition_function(ctx, 0, t)
    assert z == pytest.approx(ls.partition(0), rel=1e-8)
    assert expected_cost(ctx, 0, t) == pytest.approx(ls.expected_cost(0), rel=1e-8)
    N = expected_edge_traversals(ctx, 0, t).toarray()
    assert np.allclose(N, ls.traversals(0), rtol=1e-8, atol=1e-10)


def test_enumeration_agrees_with_rsp_core(tri_ctx):
    g = random_graph(np.random.default_rng(3), 4, p=0.3)
    ctx = RspContext(g, 2.0)
    pe = enumerate_hitting_paths(ctx, 0, 3, 14)
    z = partition_function(ctx, 0, 3)
    assert abs(oracle_partition(pe) - z) <= pe.tail_bound + 1e-15


@pytest.mark.parametrize(
    "edges,pair,want",
    [
        ([(0, 1, 1.0)], (0, 1), 1.0),
        ([(0, 1, 1.0), (1, 2, 1.0)], (0, 2), 2.0),
        ([(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)], (0, 1), 2 / 3),
    ],
    ids=["unit", "series", "three-cycle"],
)
def test_resistance_examples(edges, pair, want):
    rows = []
    for i, j, a in edges:
        rows += [(i, j, a, 1.0), (j, i, a, 1.0)]
    n = max(max(i, j) for i, j, _ in edges) + 1
    R = resistance_distance(Graph.from_edges(n, rows))
    assert R[pair] == pytest.approx(want)
    assert R[pair[::-1]] == pytest.approx(want)


def test_resistance_needs_symmetry(tri):
    with pytest.raises(ValueError):
        resistance_distance(tri)
