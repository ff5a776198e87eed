import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rspmle import CostField, Graph, GraphError, build_grid, gaussian_landscape, load_edge_list, save_edge_list
from rspmle.graph import (
    edge_list_text,
    hop_distances,
    is_strongly_connected,
    load_raster,
    reference_transitions,
    save_raster,
)

from conftest import random_graph, triangle


def test_grid_2x2_counts_and_diagonal_weights():
    g = build_grid(2, 2, 1.0)
    assert g.n == 4
    assert g.n_edges == 12
    k = g.edge_index(0, 3)
    assert g.cost[k] == pytest.approx(math.sqrt(2))
    assert g.affinity[k] == pytest.approx(1 / math.sqrt(2))


def test_grid_1x2():
    g = build_grid(1, 2, 1.0)
    assert g.n == 2 and g.n_edges == 2
    assert list(g.cost) == [1.0, 1.0]


def test_grid_20x20_interior_degree():
    g = build_grid(20, 20)
    assert g.n == 400
    outdeg = np.bincount(g.src, minlength=g.n)
    assert outdeg[5 * 20 + 5] == 8
    assert outdeg[0] == 3


def test_grid_cost_into_pixel():
    field = np.array([[1.0, 2.0], [3.0, 4.0]])
    g = build_grid(2, 2, CostField(field))
    assert g.cost[g.edge_index(0, 1)] == 2.0
    assert g.cost[g.edge_index(1, 0)] == 1.0
    assert g.cost[g.edge_index(1, 2)] == pytest.approx(3.0 * math.sqrt(2))


def test_grid_rejects_nonpositive_pixels():
    with pytest.raises(GraphError):
        build_grid(2, 2, CostField(np.array([[1.0, 0.0], [1.0, 1.0]])))


@given(st.integers(1, 7), st.integers(1, 7), st.booleans())
def test_grid_edge_count_combinatorial(rows, cols, diag):
    if rows * cols < 2:
        return
    g = build_grid(rows, cols, 1.0, diagonals=diag)
    undirected = rows * (cols - 1) + cols * (rows - 1)
    if diag:
        undirected += 2 * (rows - 1) * (cols - 1)
    assert g.n_edges == 2 * undirected


def test_landscape_zero_amplitude_is_flat():
    f = gaussian_landscape(6, 7, amplitude=0.0, seed=3)
    assert np.all(f.values == 0.5)


def test_landscape_defaults_bracket_base():
    f = gaussian_landscape(20, 20, seed=1)
    assert f.values.min() < 0.5 < f.values.max()
    assert f.values.min() >= 0.05


def test_landscape_seeded():
    a = gaussian_landscape(10, 10, seed=11)
    b = gaussian_landscape(10, 10, seed=11)
    c = gaussian_landscape(10, 10, seed=12)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


def test_landscape_amplitude_must_stay_below_base():
    with pytest.raises(GraphError):
        gaussian_landscape(5, 5, amplitude=0.5)


def test_edge_list_single_row():
    g = load_edge_list(io.StringIO("0,1,1.0,1.0\n"), allow_sinks=True)
    assert g.n == 2 and g.n_edges == 1


def test_edge_list_duplicate_reports_line():
    text = "src,dst,affinity,cost\n0,1,1,1\n1,0,1,1\n0,1,2,2\n"
    with pytest.raises(GraphError, match="line 4"):
        load_edge_list(io.StringIO(text))


@pytest.mark.parametrize(
    "row",
    ["0,0,1,1", "0,1,-1,1", "0,1,1,0", "0,1,x,1", "0,1,1"],
)
def test_edge_list_bad_rows(row):
    with pytest.raises(GraphError):
        load_edge_list(io.StringIO(row + "\n"), allow_sinks=True)


def test_edge_list_round_trip_triangle():
    g = triangle()
    buf = io.StringIO()
    save_edge_list(g, buf)
    buf.seek(0)
    assert load_edge_list(buf, allow_sinks=True) == g


@given(st.integers(2, 7), st.integers(0, 2**32 - 1))
def test_edge_list_round_trip_random(n, seed):
    g = random_graph(np.random.default_rng(seed), n)
    back = load_edge_list(io.StringIO(edge_list_text(g)), n=g.n)
    assert back == g


def test_reference_transitions_examples(tri):
    P = reference_transitions(tri).toarray()
    assert P[0, 1] == P[0, 2] == 0.5
    assert P[1, 2] == 1.0
    g = Graph.from_edges(3, [(0, 1, 1.0, 1.0), (0, 2, 3.0, 1.0), (1, 0, 1, 1), (2, 0, 1, 1)])
    assert reference_transitions(g).toarray()[0, 1:] == pytest.approx([0.25, 0.75])


@given(st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_reference_rows_sum_to_one(n, seed):
    g = random_graph(np.random.default_rng(seed), n)
    P = reference_transitions(g)
    assert np.allclose(np.asarray(P.sum(axis=1)).ravel(), 1.0, atol=1e-12)


def test_sinks_need_flag():
    with pytest.raises(GraphError):
        Graph.from_edges(2, [(0, 1, 1.0, 1.0)])


def test_graph_invariants_enforced():
    with pytest.raises(GraphError):
        Graph.from_edges(2, [(0, 1, 1, 1), (0, 1, 1, 1), (1, 0, 1, 1)])
    with pytest.raises(GraphError):
        Graph.from_edges(2, [(0, 1, 0.0, 1), (1, 0, 1, 1)])


def test_connectivity_and_hops(tri):
    assert not is_strongly_connected(tri)
    assert is_strongly_connected(build_grid(3, 3))
    h = hop_distances(build_grid(3, 3))
    assert h[0, 8] == 2
    assert h[0, 2] == 2


def test_raster_round_trip():
    v = np.array([[0.5, 1.25], [3.0, 1e-3]])
    buf = io.StringIO()
    save_raster(v, buf)
    buf.seek(0)
    assert np.array_equal(load_raster(buf), v)


def test_raster_ragged():
    with pytest.raises(GraphError):
        load_raster(io.StringIO("1 2\n3\n"))
