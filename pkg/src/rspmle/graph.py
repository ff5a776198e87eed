"""Directed weighted graphs, grid builders, cost landscapes and file formats."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph


class GraphError(ValueError):
    """Invalid graph data. ``line`` holds the 1-based input line when known."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Seeded PCG64 generator; worker ``i`` of a run uses ``stream=i``."""
    return np.random.Generator(np.random.PCG64(int(seed) + int(stream)))


@dataclass(frozen=True, eq=False)
class Graph:
    """Directed graph with positive edge affinities and costs.

    Edges are stored sorted by ``(src, dst)`` so that the CSR matrices
    returned by :meth:`affinity_matrix` and :meth:`cost_matrix` have their
    ``data`` arrays aligned with the edge arrays.

    Parameters
    ----------
    n : int
        Number of nodes, labelled ``0 .. n-1``.
    src, dst : array_like of int
        Edge endpoints.
    affinity, cost : array_like of float
        Strictly positive edge weights.
    allow_sinks : bool
        Permit nodes without out-edges.
    grid_shape : (int, int), optional
        Raster shape when the graph comes from :func:`build_grid`.
    """

    n: int
    src: np.ndarray
    dst: np.ndarray
    affinity: np.ndarray
    cost: np.ndarray
    allow_sinks: bool = False
    grid_shape: tuple[int, int] | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        n = int(self.n)
        if n < 1:
            raise GraphError("graph needs at least one node")
        src = np.asarray(self.src, dtype=np.int64).ravel()
        dst = np.asarray(self.dst, dtype=np.int64).ravel()
        aff = np.asarray(self.affinity, dtype=np.float64).ravel()
        cost = np.asarray(self.cost, dtype=np.float64).ravel()
        if not (len(src) == len(dst) == len(aff) == len(cost)):
            raise GraphError("edge arrays differ in length")
        if len(src) and (src.min() < 0 or dst.min() < 0 or max(src.max(), dst.max()) >= n):
            raise GraphError("edge endpoint outside 0..n-1")
        if np.any(src == dst):
            k = int(np.flatnonzero(src == dst)[0])
            raise GraphError(f"self-loop at node {src[k]}")
        if not (np.all(np.isfinite(aff)) and np.all(aff > 0)):
            raise GraphError("affinities must be finite and > 0")
        if not (np.all(np.isfinite(cost)) and np.all(cost > 0)):
            raise GraphError("costs must be finite and > 0")
        order = np.lexsort((dst, src))
        src, dst, aff, cost = src[order], dst[order], aff[order], cost[order]
        dup = (np.diff(src) == 0) & (np.diff(dst) == 0)
        if np.any(dup):
            k = int(np.flatnonzero(dup)[0])
            raise GraphError(f"duplicate edge ({src[k]},{dst[k]})")
        outdeg = np.bincount(src, minlength=n)
        if not self.allow_sinks and np.any(outdeg == 0):
            k = int(np.flatnonzero(outdeg == 0)[0])
            raise GraphError(f"node {k} has no out-edges and sinks are not allowed")
        for name, arr in (("n", n), ("src", src), ("dst", dst), ("affinity", aff), ("cost", cost)):
            if isinstance(arr, np.ndarray):
                arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple], allow_sinks: bool = False) -> "Graph":
        """Build from ``(src, dst, affinity, cost)`` tuples."""
        rows = list(edges)
        if not rows:
            return cls(n, [], [], [], [], allow_sinks=allow_sinks)
        s, d, a, c = zip(*rows)
        return cls(n, s, d, a, c, allow_sinks=allow_sinks)

    @property
    def n_edges(self) -> int:
        return len(self.src)

    def edges(self) -> list[tuple[int, int, float, float]]:
        return [
            (int(i), int(j), float(a), float(c))
            for i, j, a, c in zip(self.src, self.dst, self.affinity, self.cost)
        ]

    def _csr(self, values: np.ndarray) -> sp.csr_matrix:
        indptr = np.concatenate(([0], np.cumsum(np.bincount(self.src, minlength=self.n))))
        return sp.csr_matrix(
            (np.array(values, dtype=np.float64), self.dst.copy(), indptr), shape=(self.n, self.n)
        )

    def affinity_matrix(self) -> sp.csr_matrix:
        return self._csr(self.affinity)

    def cost_matrix(self) -> sp.csr_matrix:
        return self._csr(self.cost)

    def pattern(self) -> sp.csr_matrix:
        """CSR matrix with the edge pattern; ``data`` holds edge indices."""
        return self._csr(np.arange(self.n_edges, dtype=np.float64))

    def edge_index(self, i: int, j: int) -> int:
        """Position of edge ``(i, j)`` in the edge arrays, or -1 if absent."""
        lo, hi = np.searchsorted(self.src, [i, i + 1])
        k = lo + np.searchsorted(self.dst[lo:hi], j)
        if k < hi and self.dst[k] == j:
            return int(k)
        return -1

    def with_costs(self, cost: np.ndarray) -> "Graph":
        """Same topology and affinities, new costs (aligned with edge order)."""
        return Graph(
            self.n, self.src, self.dst, self.affinity, cost,
            allow_sinks=self.allow_sinks, grid_shape=self.grid_shape,
        )

    def least_costs_to(self, t: int) -> np.ndarray:
        """Least path cost from every node to ``t`` (``inf`` if unreachable)."""
        key = ("least_to", int(t))
        if key not in self._cache:
            rev = self.cost_matrix().T.tocsr()
            self._cache[key] = csgraph.dijkstra(rev, directed=True, indices=int(t))
        return self._cache[key]

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.n == other.n
            and np.array_equal(self.src, other.src)
            and np.array_equal(self.dst, other.dst)
            and np.array_equal(self.affinity, other.affinity)
            and np.array_equal(self.cost, other.cost)
        )

    __hash__ = object.__hash__


@dataclass(frozen=True, eq=False)
class CostField:
    """Per-pixel positive costs on a ``rows x cols`` raster."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise GraphError("cost field must be two-dimensional")
        if v.size < 2:
            raise GraphError("cost field needs at least two pixels")
        if not (np.all(np.isfinite(v)) and np.all(v > 0)):
            raise GraphError("pixel costs must be finite and > 0")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @classmethod
    def uniform(cls, rows: int, cols: int, cost: float = 1.0) -> "CostField":
        return cls(np.full((rows, cols), float(cost)))


def build_grid(
    rows: int,
    cols: int,
    cost_field: CostField | float | None = None,
    diagonals: bool = True,
) -> Graph:
    """Lattice graph over a raster.

    Node ``row * cols + col``. The cost of moving into pixel ``j`` is the
    pixel cost ``c_j``, times ``sqrt(2)`` for diagonal moves. Affinities are
    reciprocal costs.

    Parameters
    ----------
    rows, cols : int
        Raster shape.
    cost_field : CostField or float, optional
        Pixel costs. A number gives a uniform field; default 1.
    diagonals : bool
        Use the 8-neighbourhood instead of the 4-neighbourhood.
    """
    if rows < 1 or cols < 1 or rows * cols < 2:
        raise GraphError("grid needs rows*cols >= 2")
    if cost_field is None:
        cost_field = 1.0
    if not isinstance(cost_field, CostField):
        cost_field = CostField.uniform(rows, cols, float(cost_field))
    if cost_field.values.shape != (rows, cols):
        raise GraphError(
            f"cost field shape {cost_field.values.shape} does not match grid ({rows}, {cols})"
        )
    pix = cost_field.values
    offsets = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    if diagonals:
        offsets += [(-1, -1), (-1, 1), (1, -1), (1, 1)]
    r, c = np.divmod(np.arange(rows * cols), cols)
    src, dst, cost = [], [], []
    for dr, dc in offsets:
        rr, cc = r + dr, c + dc
        ok = (rr >= 0) & (rr < rows) & (cc >= 0) & (cc < cols)
        scale = math.sqrt(2.0) if dr and dc else 1.0
        src.append((r * cols + c)[ok])
        dst.append((rr * cols + cc)[ok])
        cost.append(pix[rr[ok], cc[ok]] * scale)
    cost = np.concatenate(cost)
    return Graph(
        rows * cols, np.concatenate(src), np.concatenate(dst), 1.0 / cost, cost,
        grid_shape=(rows, cols),
    )


def gaussian_landscape(
    rows: int,
    cols: int,
    n_low: int = 5,
    n_high: int = 5,
    base_cost: float = 0.5,
    amplitude: float = 0.4,
    width: float | None = None,
    seed: int = 0,
    floor: float = 0.05,
) -> CostField:
    """Base cost plus Gaussian bumps: ``n_high`` raised and ``n_low`` lowered patches.

    Centres are uniform over the raster, drawn from ``make_rng(seed)``.
    ``width`` is the bump standard deviation in pixels and defaults to
    ``min(rows, cols) / 5``. Values are clamped below at ``floor``.
    """
    if rows < 1 or cols < 1 or rows * cols < 2:
        raise GraphError("landscape needs rows*cols >= 2")
    if n_low < 0 or n_high < 0:
        raise GraphError("patch counts must be non-negative")
    if not base_cost > 0 or not floor > 0:
        raise GraphError("base_cost and floor must be positive")
    if amplitude < 0 or amplitude >= base_cost:
        raise GraphError("amplitude must satisfy 0 <= amplitude < base_cost")
    if width is None:
        width = min(rows, cols) / 5.0
    if not width > 0:
        raise GraphError("width must be positive")
    rng = make_rng(seed)
    centres = rng.uniform([0.0, 0.0], [rows, cols], size=(n_low + n_high, 2))
    signs = np.concatenate((-np.ones(n_low), np.ones(n_high)))
    rr, cc = np.mgrid[0:rows, 0:cols].astype(np.float64)
    field = np.full((rows, cols), float(base_cost))
    for (cr, ccent), sign in zip(centres, signs):
        d2 = (rr - cr) ** 2 + (cc - ccent) ** 2
        field += sign * amplitude * np.exp(-d2 / (2.0 * width**2))
    return CostField(np.maximum(field, floor))


def reference_transitions(graph: Graph) -> sp.csr_matrix:
    """Row-normalised affinities ``a_ij / sum_k a_ik``."""
    outdeg = np.bincount(graph.src, minlength=graph.n)
    if not graph.allow_sinks and np.any(outdeg == 0):
        raise GraphError(f"node {int(np.flatnonzero(outdeg == 0)[0])} has no out-edges")
    rowsum = np.bincount(graph.src, weights=graph.affinity, minlength=graph.n)
    return graph._csr(graph.affinity / rowsum[graph.src])


def is_strongly_connected(graph: Graph) -> bool:
    ncomp, _ = csgraph.connected_components(graph.affinity_matrix(), directed=True, connection="strong")
    return ncomp == 1


def hop_distances(graph: Graph) -> np.ndarray:
    """Unweighted directed hop counts between all node pairs."""
    return csgraph.shortest_path(graph.affinity_matrix(), directed=True, unweighted=True)


# --- edge list CSV -------------------------------------------------------

_HEADER = ["src", "dst", "affinity", "cost"]


def _open_text(source, mode: str):
    if isinstance(source, (str, Path)):
        return open(source, mode, newline="", encoding="utf-8"), True
    return source, False


def load_edge_list(source: str | Path | TextIO, n: int | None = None, allow_sinks: bool = False) -> Graph:
    """Read a ``src,dst,affinity,cost`` CSV.

    The node count is ``max id + 1`` unless ``n`` is given. Errors report
    the offending line.
    """
    fh, close = _open_text(source, "r")
    try:
        reader = csv.reader(fh)
        rows = []
        seen: dict[tuple[int, int], int] = {}
        header_done = False
        for lineno, row in enumerate(reader, start=1):
            if not row or all(not x.strip() for x in row):
                continue
            if not header_done:
                header_done = True
                if [x.strip().lower() for x in row] == _HEADER:
                    continue
            if len(row) != 4:
                raise GraphError(f"expected 4 fields, got {len(row)}", lineno)
            try:
                i, j = int(row[0]), int(row[1])
                a, c = float(row[2]), float(row[3])
            except ValueError as exc:
                raise GraphError(f"malformed row: {exc}", lineno) from None
            if i < 0 or j < 0:
                raise GraphError("negative node id", lineno)
            if i == j:
                raise GraphError(f"self-loop at node {i}", lineno)
            if not (math.isfinite(a) and a > 0 and math.isfinite(c) and c > 0):
                raise GraphError("affinity and cost must be finite and > 0", lineno)
            if (i, j) in seen:
                raise GraphError(f"duplicate edge ({i},{j}), first seen on line {seen[(i, j)]}", lineno)
            seen[(i, j)] = lineno
            rows.append((i, j, a, c))
    finally:
        if close:
            fh.close()
    if n is None:
        n = 1 + max((max(i, j) for i, j, _, _ in rows), default=-1)
    return Graph.from_edges(n, rows, allow_sinks=allow_sinks)


def save_edge_list(graph: Graph, sink: str | Path | TextIO) -> None:
    """Write the edges as CSV; floats use shortest round-trip repr."""
    fh, close = _open_text(sink, "w")
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_HEADER)
        for i, j, a, c in graph.edges():
            w.writerow([i, j, repr(a), repr(c)])
    finally:
        if close:
            fh.close()


def edge_list_text(graph: Graph) -> str:
    buf = io.StringIO()
    save_edge_list(graph, buf)
    return buf.getvalue()


# --- raster text ---------------------------------------------------------


def load_raster(source: str | Path | TextIO) -> np.ndarray:
    """Whitespace-separated rows of numbers."""
    fh, close = _open_text(source, "r")
    try:
        rows = []
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rows.append([float(x) for x in line.split()])
            except ValueError as exc:
                raise GraphError(f"malformed raster row: {exc}", lineno) from None
            if len(rows[-1]) != len(rows[0]):
                raise GraphError("ragged raster row", lineno)
    finally:
        if close:
            fh.close()
    if not rows:
        raise GraphError("empty raster")
    return np.array(rows, dtype=np.float64)


def save_raster(values: np.ndarray, sink: str | Path | TextIO) -> None:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise GraphError("raster must be two-dimensional")
    fh, close = _open_text(sink, "w")
    try:
        for row in values:
            fh.write(" ".join(repr(float(x)) for x in row) + "\n")
    finally:
        if close:
            fh.close()
