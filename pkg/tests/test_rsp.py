import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rspmle import (
    BracketError,
    Graph,
    RspContext,
    RspError,
    beta_for_relative_entropy,
    biased_transitions,
    build_grid,
    expected_cost,
    expected_edge_traversals,
    expected_node_visits,
    hitting_partition_matrix,
    log_partition_function,
    partition_function,
    relative_entropy,
    rsp_betweenness,
)
from rspmle.oracle import least_cost, random_walk_hitting_cost, resistance_distance
from rspmle.rsp import likelihood_matrix, pair_quantities

from conftest import LN2, random_graph, triangle, two_node


def _undirected(n, edges):
    """Both directions of each ``(i, j, conductance)``, with cost ``1 / a``."""
    rows = []
    for i, j, a in edges:
        rows += [(i, j, a, 1.0 / a), (j, i, a, 1.0 / a)]
    return Graph.from_edges(n, rows)


# --- frozen small-graph values ------------------------------------------------


def test_likelihood_matrix_examples(tri):
    W = likelihood_matrix(tri, LN2).toarray()
    assert W[0, 1] == pytest.approx(0.25)
    assert W[0, 2] == pytest.approx(0.25)
    assert W[1, 2] == pytest.approx(0.5)
    g = Graph.from_edges(2, [(0, 1, 1.0, 2.0)], allow_sinks=True)
    assert likelihood_matrix(g, LN2)[0, 1] == pytest.approx(0.25)


def test_likelihood_matrix_rejects_nonpositive_beta(tri):
    for b in (0.0, -1.0):
        with pytest.raises(RspError):
            RspContext(tri, b)


def test_partition_triangle(tri_ctx):
    assert partition_function(tri_ctx, 0, 2) == pytest.approx(0.375, rel=1e-14)


def test_partition_single_edge():
    ctx = RspContext(two_node(1.7), 0.9)
    assert partition_function(ctx, 0, 1) == pytest.approx(math.exp(-0.9 * 1.7), rel=1e-14)


def test_partition_random_walk_limit(tri):
    assert partition_function(RspContext(tri, 1e-8), 0, 2) == pytest.approx(1.0, abs=1e-7)


def test_partition_errors(tri_ctx):
    with pytest.raises(RspError):
        partition_function(tri_ctx, 1, 1)
    assert log_partition_function(tri_ctx, 2, 0) == -math.inf


def test_hitting_matrix_triangle(tri_ctx):
    Zh = hitting_partition_matrix(tri_ctx)
    assert Zh[0, 2] == pytest.approx(0.375)
    assert np.all(np.diag(Zh.data) == 0)
    assert Zh.mask[2, 0]


def test_expected_cost_triangle(tri, tri_ctx):
    assert expected_cost(tri_ctx, 0, 2) == pytest.approx(4 / 3, rel=1e-13)
    assert expected_cost(RspContext(tri, 20.0), 0, 2) == pytest.approx(1.0, abs=1e-6)


def test_expected_cost_single_edge():
    for beta in (0.01, 1.0, 30.0):
        assert expected_cost(RspContext(two_node(2.5), beta), 0, 1) == pytest.approx(2.5)


def test_traversals_triangle(tri_ctx):
    N = expected_edge_traversals(tri_ctx, 0, 2).toarray()
    assert N[0, 1] == pytest.approx(1 / 3)
    assert N[1, 2] == pytest.approx(1 / 3)
    assert N[0, 2] == pytest.approx(2 / 3)
    assert expected_edge_traversals(RspContext(two_node(), 1.0), 0, 1)[0, 1] == pytest.approx(1.0)


def test_traversals_nonnegative_on_grid():
    g = build_grid(20, 20)
    ctx = RspContext(g, 1.0)
    rng = np.random.default_rng(5)
    for s, t in rng.choice(g.n, size=(3, 2), replace=False):
        N = expected_edge_traversals(ctx, s, t)
        assert N.data.min() >= 0


def test_visits_triangle(tri_ctx):
    v = expected_node_visits(tri_ctx, 0, 2)
    assert v == pytest.approx([1.0, 1 / 3, 0.0])
    assert rsp_betweenness(tri_ctx, [(0, 2)]) == pytest.approx(v)


def test_betweenness_sums_pairs():
    g = build_grid(4, 4)
    ctx = RspContext(g, 0.7)
    pairs = [(0, 15), (3, 12), (5, 10)]
    want = sum(expected_node_visits(ctx, s, t) for s, t in pairs)
    assert rsp_betweenness(ctx, pairs) == pytest.approx(want, rel=1e-12)
    with pytest.raises(RspError):
        rsp_betweenness(ctx, [])


def test_biased_transitions_triangle(tri_ctx):
    P = biased_transitions(tri_ctx, 2).toarray()
    assert P[0, 1:] == pytest.approx([1 / 3, 2 / 3])
    assert P[1, 2] == pytest.approx(1.0)
    assert np.all(P[2] == 0)


def test_biased_transitions_large_beta_pick_least_cost():
    g = Graph.from_edges(3, [(0, 1, 1, 1.0), (0, 2, 1, 3.0), (1, 2, 1, 1.0)], allow_sinks=True)
    P = biased_transitions(RspContext(g, 40.0), 2).toarray()
    assert P[0, 1] == pytest.approx(1.0, abs=1e-12)


def test_relative_entropy_examples(tri_ctx):
    want = -LN2 * 4 / 3 - math.log(0.375)
    assert relative_entropy(tri_ctx, 0, 2) == pytest.approx(want, rel=1e-12)
    assert want == pytest.approx(0.0566, abs=5e-5)
    for beta in (0.1, 3.0):
        assert relative_entropy(RspContext(two_node(), beta), 0, 1) == pytest.approx(0.0, abs=1e-15)


def test_beta_for_relative_entropy_round_trip(tri):
    j0 = relative_entropy(RspContext(tri, 1.3), 0, 2)
    res = beta_for_relative_entropy(tri, 0, 2, j0)
    assert res.status == "converged"
    assert abs(res.relative_entropy - j0) < 1e-8
    assert res.beta == pytest.approx(1.3, rel=1e-5)


def test_beta_for_relative_entropy_edges(tri):
    assert beta_for_relative_entropy(tri, 0, 2, 0.0).status == "boundary-lo"
    with pytest.raises(BracketError):
        beta_for_relative_entropy(tri, 0, 2, 5.0)


def test_pair_quantities_bundle(tri_ctx):
    q = pair_quantities(tri_ctx, 0, 2, traversals=True, visits=True)
    assert q.partition == pytest.approx(0.375)
    assert q.expected_cost == pytest.approx(4 / 3)
    assert q.visits[1] == pytest.approx(1 / 3)


# --- invariants ---------------------------------------------------------------


@given(st.integers(2, 50), st.integers(0, 2**32 - 1), st.floats(0.05, 5.0))
def test_route_equivalence(n, seed, beta):
    g = random_graph(np.random.default_rng(seed), n, p=min(0.45, 4.0 / n))
    ctx = RspContext(g, beta)
    Zh = hitting_partition_matrix(ctx)
    rng = np.random.default_rng(seed + 1)
    for _ in range(4):
        s, t = rng.choice(n, 2, replace=False)
        assert partition_function(ctx, s, t) == pytest.approx(Zh[s, t], rel=1e-10)


@given(st.integers(3, 9), st.integers(0, 2**32 - 1), st.floats(0.05, 5.0))
def test_flow_conservation(n, seed, beta):
    g = random_graph(np.random.default_rng(seed), n)
    ctx = RspContext(g, beta)
    s, t = 0, n - 1
    N = expected_edge_traversals(ctx, s, t).toarray()
    out, inn = N.sum(axis=1), N.sum(axis=0)
    net = out - inn
    assert net[s] == pytest.approx(1.0, abs=1e-9)
    assert net[t] == pytest.approx(-1.0, abs=1e-9)
    mid = [i for i in range(n) if i not in (s, t)]
    assert np.allclose(net[mid], 0.0, atol=1e-9)
    assert expected_node_visits(ctx, s, t) == pytest.approx(out, abs=1e-12)


@given(st.integers(3, 9), st.integers(0, 2**32 - 1), st.floats(0.05, 5.0))
def test_biased_rows_sum_to_one(n, seed, beta):
    g = random_graph(np.random.default_rng(seed), n)
    P = biased_transitions(RspContext(g, beta), n - 1)
    sums = np.asarray(P.sum(axis=1)).ravel()
    assert np.allclose(np.delete(sums, n - 1), 1.0, atol=1e-12)
    assert sums[n - 1] == 0


@given(st.integers(3, 9), st.integers(0, 2**32 - 1), st.floats(0.05, 5.0))
def test_expected_cost_is_log_partition_slope(n, seed, beta):
    g = random_graph(np.random.default_rng(seed), n)
    h = 1e-5 * beta
    lp = log_partition_function(RspContext(g, beta + h), 0, n - 1)
    lm = log_partition_function(RspContext(g, beta - h), 0, n - 1)
    fd = -(lp - lm) / (2 * h)
    assert fd == pytest.approx(expected_cost(RspContext(g, beta), 0, n - 1), rel=1e-6)


@given(st.integers(3, 9), st.integers(0, 2**32 - 1))
def test_expected_cost_monotone_in_beta(n, seed):
    g = random_graph(np.random.default_rng(seed), n)
    costs = [expected_cost(RspContext(g, b), 0, n - 1) for b in np.geomspace(1e-3, 50, 25)]
    assert np.all(np.diff(costs) <= 1e-12 * max(costs))
    assert costs[-1] >= least_cost(g, 0, n - 1) - 1e-12


@given(st.integers(3, 9), st.integers(0, 2**32 - 1))
def test_random_walk_limit(n, seed):
    g = random_graph(np.random.default_rng(seed), n)
    t = n - 1
    h = random_walk_hitting_cost(g, t)
    ctx = RspContext(g, 1e-8)
    for s in range(n - 1):
        assert expected_cost(ctx, s, t) == pytest.approx(h[s], rel=1e-4)


@given(st.integers(3, 8), st.integers(0, 2**32 - 1))
def test_large_beta_limit(n, seed):
    # distinct integer costs keep the least-cost path unique and the gap wide
    rng = np.random.default_rng(seed)
    g0 = random_graph(rng, n)
    g = g0.with_costs(rng.integers(1, 6, size=g0.n_edges).astype(float))
    ctx = RspContext(g, 60.0)
    for s in range(n - 1):
        assert expected_cost(ctx, s, n - 1) == pytest.approx(least_cost(g, s, n - 1), rel=1e-6)


@pytest.mark.parametrize(
    "graph",
    [
        _undirected(3, [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)]),
        _undirected(4, [(0, 1, 1.0), (1, 2, 2.0), (2, 3, 0.5), (3, 0, 1.5), (0, 2, 1.0)]),
    ],
    ids=["three-cycle", "four-node"],
)
def test_commute_cost_is_resistance(graph):
    R = resistance_distance(graph)
    ctx = RspContext(graph, 1e-8)
    scale = float(np.sum(graph.affinity * graph.cost))
    for s in range(graph.n):
        for t in range(s + 1, graph.n):
            commute = expected_cost(ctx, s, t) + expected_cost(ctx, t, s)
            assert commute / scale == pytest.approx(R[s, t], rel=1e-4)


def test_unreachable_pair_raises_in_pair_api(tri_ctx):
    with pytest.raises(RspError):
        expected_cost(tri_ctx, 2, 0)
