import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rspmle import (
    Graph,
    RspContext,
    RspError,
    Trajectory,
    build_grid,
    edge_cost_gradient,
    expected_edge_traversals,
    log_likelihood_complete,
    make_rng,
    mle_beta_complete,
    mle_edge_costs,
    sample_path,
)
from rspmle.complete import expected_cost_sum
from rspmle.oracle import enumerate_hitting_paths, path_probabilities

from conftest import LN2, random_graph, triangle


def test_triangle_path_log_likelihoods(tri):
    assert log_likelihood_complete(tri, LN2, [(0, 1, 2)]) == pytest.approx(math.log(1 / 3), rel=1e-13)
    assert log_likelihood_complete(tri, LN2, [(0, 2)]) == pytest.approx(math.log(2 / 3), rel=1e-13)


def test_copies_add(tri):
    one = log_likelihood_complete(tri, 0.7, [(0, 1, 2)])
    assert log_likelihood_complete(tri, 0.7, [(0, 1, 2)] * 2) == 2 * one


def test_unreachable_target_gives_minus_inf():
    g = Graph.from_edges(3, [(0, 1, 1, 1), (1, 0, 1, 1), (2, 0, 1, 1)])
    assert log_likelihood_complete(g, 1.0, [(2, 0, 1)]) > -math.inf
    g2 = Graph.from_edges(3, [(0, 1, 1, 1), (1, 2, 1, 1)], allow_sinks=True)
    assert log_likelihood_complete(g2, 1.0, [(0, 1, 2)]) == pytest.approx(0.0, abs=1e-14)


def test_mle_triangle_closed_form(tri):
    res = mle_beta_complete(tri, [(0, 2)] * 3 + [(0, 1, 2)])
    assert res.status == "converged"
    assert res.beta_hat == pytest.approx(math.log(3), rel=1e-5)
    assert res.bracket[0] <= res.beta_hat <= res.bracket[1]


def test_mle_least_cost_only_is_boundary_hi(tri):
    res = mle_beta_complete(tri, [(0, 2)] * 4)
    assert res.status == "boundary-hi"
    assert res.beta_hat == res.bracket[1]


def test_mle_errors(tri):
    with pytest.raises(RspError):
        mle_beta_complete(tri, [])
    with pytest.raises(RspError):
        mle_beta_complete(tri, [(0, 2)], bracket=(1.0, 0.5))


def test_mle_result_json(tri):
    d = json.loads(mle_beta_complete(tri, [(0, 2)] * 3 + [(0, 1, 2)]).to_json())
    assert set(d) == {"beta_hat", "log_likelihood", "status", "bracket", "evaluations"}


def test_mle_order_and_batch_invariance():
    g = build_grid(6, 6)
    ctx = RspContext(g, 0.8)
    rng = make_rng(1)
    paths = [sample_path(ctx, int(s), int(t), rng) for s, t in [(0, 35), (5, 30), (2, 33), (0, 35), (7, 28)] * 4]
    a = mle_beta_complete(g, paths).beta_hat
    b = mle_beta_complete(g, paths[::-1]).beta_hat
    assert a == pytest.approx(b, rel=1e-12)
    # splitting into batches does not change the estimating equation
    ctx2 = RspContext(g, a)
    whole = expected_cost_sum(ctx2, paths)
    parts = expected_cost_sum(ctx2, paths[:7]) + expected_cost_sum(ctx2, paths[7:])
    assert whole == pytest.approx(parts, rel=1e-12)


@given(st.integers(3, 8), st.integers(0, 2**32 - 1))
def test_expected_cost_sum_nonincreasing(n, seed):
    g = random_graph(np.random.default_rng(seed), n)
    paths = [Trajectory((0, n - 1))] if g.edge_index(0, n - 1) >= 0 else []
    rng = make_rng(seed)
    paths += [sample_path(RspContext(g, 1.0), 0, n - 1, rng) for _ in range(3)]
    vals = [expected_cost_sum(RspContext(g, b), paths) for b in np.geomspace(1e-3, 30, 20)]
    assert np.all(np.diff(vals) <= 1e-12 * max(vals))


@given(st.integers(3, 8), st.integers(0, 2**32 - 1), st.floats(0.1, 5.0), st.floats(0.2, 5.0))
def test_cost_scaling_invariance(n, seed, beta, k):
    g = random_graph(np.random.default_rng(seed), n)
    rng = make_rng(seed)
    paths = [sample_path(RspContext(g, beta), 0, n - 1, rng) for _ in range(3)]
    scaled = g.with_costs(g.cost * k)
    assert log_likelihood_complete(scaled, beta / k, paths) == pytest.approx(
        log_likelihood_complete(g, beta, paths), abs=1e-9
    )


def _fd_gradient(g, paths, h=1e-6):
    out = np.zeros(g.n_edges)
    for e in range(g.n_edges):
        cp, cm = g.cost.copy(), g.cost.copy()
        cp[e] += h
        cm[e] -= h
        out[e] = (log_likelihood_complete(g.with_costs(cp), 1.0, paths) - log_likelihood_complete(g.with_costs(cm), 1.0, paths)) / (2 * h)
    return out


def test_edge_gradient_triangle_fd(tri):
    paths = [(0, 1, 2), (0, 2), (0, 2)]
    grad = edge_cost_gradient(tri, paths)
    assert grad == pytest.approx(_fd_gradient(tri, paths), rel=1e-5, abs=1e-9)


@given(st.integers(3, 7), st.integers(0, 2**32 - 1))
def test_edge_gradient_fd_random(n, seed):
    g = random_graph(np.random.default_rng(seed), n)
    rng = make_rng(seed)
    ctx = RspContext(g, 1.0)
    paths = [sample_path(ctx, 0, n - 1, rng), sample_path(ctx, 1, 0, rng)]
    grad = edge_cost_gradient(g, paths)
    fd = _fd_gradient(g, paths)
    assert np.allclose(grad, fd, rtol=1e-5, atol=1e-7)


def test_edge_gradient_single_traversal(tri):
    grad = edge_cost_gradient(tri, [(0, 2)])
    nbar = expected_edge_traversals(RspContext(tri, 1.0), 0, 2)
    k = tri.edge_index(0, 2)
    assert grad[k] == pytest.approx(nbar[0, 2] - 1.0)


def test_edge_gradient_near_zero_at_truth():
    g = build_grid(3, 3)
    ctx = RspContext(g, 1.0)
    rng = make_rng(11)
    n = 4000
    paths = [sample_path(ctx, 0, 8, rng) for _ in range(n)]
    grad = edge_cost_gradient(g, paths)
    counts = np.array([[p.edge_counts().get((int(i), int(j)), 0) for i, j in zip(g.src, g.dst)] for p in paths])
    nbar = expected_edge_traversals(ctx, 0, 8).toarray()[g.src, g.dst]
    # rare edges get a Poisson floor on the variance
    se = np.sqrt(n * np.maximum(counts.var(axis=0), nbar))
    live = se > 0
    assert np.all(np.abs(grad[live]) < 4 * se[live])


def test_edge_cost_mle_stationarity_line_graph():
    g = Graph.from_edges(3, [(0, 1, 1, 1.0), (1, 0, 1, 1.0), (1, 2, 1, 1.0), (2, 1, 1, 1.0)])
    paths = [(0, 1, 2)] * 3 + [(0, 1, 0, 1, 2)]
    res = mle_edge_costs(g, paths, tol=1e-6)
    assert res.converged
    assert np.all(np.diff(res.history) >= -1e-12)
    fitted = g.with_costs(res.costs)
    grad = edge_cost_gradient(fitted, paths)
    active = res.costs > 1e-6
    assert np.abs(grad[active]).max() < 1e-6


def test_edge_cost_step_from_truth_does_not_decrease():
    g = Graph.from_edges(
        4,
        [(0, 1, 1, 1.0), (0, 2, 1, 1.3), (1, 3, 1, 1.0), (2, 3, 1, 0.7), (1, 2, 1, 0.5), (3, 0, 1, 1.0)],
    )
    ctx = RspContext(g, 1.0)
    rng = make_rng(2)
    paths = [sample_path(ctx, 0, 3, rng) for _ in range(300)]
    res = mle_edge_costs(g, paths, max_iter=1)
    assert res.history[-1] >= res.history[0]


def test_edge_cost_mle_reproduces_path_law():
    g = Graph.from_edges(
        4,
        [(0, 1, 1, 1.0), (0, 2, 1, 1.3), (1, 3, 1, 1.0), (2, 3, 1, 0.7), (1, 2, 1, 0.5)],
        allow_sinks=True,
    )
    ctx = RspContext(g, 1.0)
    truth = path_probabilities(enumerate_hitting_paths(ctx, 0, 3, 6))
    rng = make_rng(3)
    paths = [sample_path(ctx, 0, 3, rng) for _ in range(20_000)]
    res = mle_edge_costs(g, paths, tol=1e-5)
    fitted = path_probabilities(enumerate_hitting_paths(RspContext(g.with_costs(res.costs), 1.0), 0, 3, 6))
    for p, v in truth.items():
        assert fitted[p] == pytest.approx(v, rel=0.05)
