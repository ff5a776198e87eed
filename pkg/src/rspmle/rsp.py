"""Randomized-shortest-path quantities from sparse absorbed linear systems.

For a target ``t`` the absorbed matrix is ``W`` with row ``t`` zeroed. Every
system is stored in a potential-shifted frame: with ``phi_i`` the least cost
from ``i`` to ``t``, the entries

    w'_ij = w_ij * exp(beta * (phi_i - phi_j))

are a diagonal similarity of the absorbed matrix, so partition functions
pick up a factor ``exp(beta * phi_s)`` and everything else is unchanged.
This keeps the solves in range at large ``beta``: every hitting-path sum in
the shifted frame lies in ``(0, 1]``.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .graph import Graph, GraphError, reference_transitions


class RspError(ValueError):
    """Invalid query, e.g. ``s == t`` or a non-positive ``beta``."""


class UnreachableError(RspError):
    """The target cannot be reached from the source."""


class BracketError(RspError):
    """A root or optimum is not enclosed by the search bracket."""


def _check_beta(beta: float) -> float:
    beta = float(beta)
    if not (math.isfinite(beta) and beta > 0):
        raise RspError(f"beta must be finite and > 0, got {beta}")
    return beta


def likelihood_matrix(graph: Graph, beta: float) -> sp.csr_matrix:
    """``W = P_rw * exp(-beta * C)`` on the edge pattern."""
    beta = _check_beta(beta)
    p = reference_transitions(graph).data
    return graph._csr(p * np.exp(-beta * graph.cost))


def _lu(a: sp.spmatrix):
    # Natural pivoting keeps the M-matrix structure; elimination is then
    # free of cancellation.
    return spla.splu(
        sp.csc_matrix(a),
        permc_spec="MMD_AT_PLUS_A",
        diag_pivot_thresh=0.0,
        options=dict(SymmetricMode=True),
    )


class AbsorbedSystem:
    """Factorized ``I - W^{-t}`` in the potential-shifted frame.

    Attributes
    ----------
    t : int
        Absorbing target.
    phi : ndarray
        Least cost from each node to ``t`` (``inf`` if unreachable).
    reach : ndarray of bool
        Nodes from which ``t`` is reachable.
    D : csr_matrix
        Shifted absorbed matrix, ``n x n``, on the graph's edge pattern with
        ``D.data`` aligned to the edge arrays. Entries in row ``t`` and on
        edges touching nodes that cannot reach ``t`` are zero.
    x : ndarray
        Shifted hitting sums ``Z'_it``; ``x[t] = 1``, zero off ``reach``.
    """

    def __init__(self, ctx: "RspContext", t: int):
        graph = ctx.graph
        n = graph.n
        self.t = t = int(t)
        self.beta = ctx.beta
        self.phi = graph.least_costs_to(t)
        self.reach = np.isfinite(self.phi)
        src, dst = graph.src, graph.dst
        keep = self.reach[src] & self.reach[dst] & (src != t)
        phi_s = np.where(self.reach[src], self.phi[src], 0.0)
        phi_d = np.where(self.reach[dst], self.phi[dst], 0.0)
        with np.errstate(over="ignore", invalid="ignore"):
            expo = ctx.beta * (phi_s - graph.cost - phi_d)
        # phi_i <= c_ij + phi_j, so the exponent is <= 0 up to rounding
        vals = np.where(keep, ctx.p * np.exp(np.minimum(expo, 0.0)), 0.0)
        self.edge_weight = vals
        # keep the full edge pattern so D.data stays aligned with graph edges
        D = graph._csr(vals)
        self.D = D
        self.cost = graph.cost
        self.nodes = np.flatnonzero(self.reach)
        self.local = np.full(n, -1, dtype=np.int64)
        self.local[self.nodes] = np.arange(len(self.nodes))
        Dl = D[self.nodes][:, self.nodes]
        self._lu = _lu(sp.identity(len(self.nodes), format="csc") - Dl)
        rhs = np.zeros(len(self.nodes))
        rhs[self.local[t]] = 1.0
        self.x = self._expand(self._lu.solve(rhs))
        self.row_sum_max = float(D.sum(axis=1).max()) if D.nnz else 0.0
        self._lock = threading.Lock()
        self._sampling = None
        self._reach_from: dict[int, np.ndarray] = {}
        self._pruned = None

    def _expand(self, v: np.ndarray) -> np.ndarray:
        out = np.zeros(len(self.local))
        out[self.nodes] = v
        return out

    def solve(self, b: np.ndarray) -> np.ndarray:
        """``N' b`` with ``N' = (I - D)^{-1}``, zero off ``reach``."""
        return self._expand(self._lu.solve(np.asarray(b, dtype=np.float64)[self.nodes]))

    def solve_rows(self, sources: Iterable[int]) -> np.ndarray:
        """Rows ``e_s^T N'`` for each source, shape ``(len(sources), n)``."""
        sources = np.atleast_1d(np.asarray(sources, dtype=np.int64))
        loc = self.local[sources]
        if np.any(loc < 0):
            raise UnreachableError("source cannot reach target")
        rhs = np.zeros((len(self.nodes), len(sources)))
        rhs[loc, np.arange(len(sources))] = 1.0
        sol = self._lu.solve(rhs, trans="T")
        out = np.zeros((len(sources), len(self.local)))
        out[:, self.nodes] = sol.T
        return out

    def log_partition(self, s=None) -> np.ndarray | float:
        """``log Z_st`` for one or all sources (``-inf`` if unreachable)."""
        with np.errstate(divide="ignore", invalid="ignore"):
            shift = self.beta * np.where(self.reach, self.phi, 0.0)
            lz = np.where(self.reach, np.log(self.x) - shift, -np.inf)
        return lz if s is None else float(lz[s])

    def expected_costs(self) -> np.ndarray:
        """``<c>_st`` for every source ``s`` (``nan`` where undefined)."""
        Dc = self.D.copy()
        Dc.data = self.D.data * self.cost
        u = self.solve(Dc @ self.x)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(self.reach, u / self.x, np.nan)
        out[self.t] = np.nan
        return out

    def sampling_table(self):
        """CSR pattern plus cumulative biased-transition probabilities."""
        with self._lock:
            if self._sampling is None:
                P = self.biased()
                cum = P.data.copy()
                for i in range(P.shape[0]):
                    a, b = P.indptr[i], P.indptr[i + 1]
                    if b > a and P.data[a:b].any():
                        c = np.cumsum(P.data[a:b])
                        cum[a:b] = c / c[-1]
                self._sampling = (P.indptr.astype(np.int64), P.indices.astype(np.int64), cum)
            return self._sampling

    def biased(self) -> sp.csr_matrix:
        """Target-conditioned transitions ``w_ij z_jt / z_it`` on the edge pattern."""
        D = self.D
        rows = np.repeat(np.arange(D.shape[0]), np.diff(D.indptr))
        P = D.copy()
        with np.errstate(divide="ignore", invalid="ignore"):
            P.data = D.data * self.x[D.indices] / self.x[rows]
        P.data[~np.isfinite(P.data)] = 0.0
        return P

    def reachable_from(self, a: int) -> np.ndarray:
        """Nodes reachable from ``a`` in zero or more absorbed steps."""
        a = int(a)
        with self._lock:
            if a not in self._reach_from:
                from scipy.sparse.csgraph import breadth_first_order

                if self._pruned is None:
                    # csgraph treats stored zeros as edges
                    self._pruned = self.D.copy()
                    self._pruned.eliminate_zeros()
                order = breadth_first_order(self._pruned, a, directed=True, return_predecessors=False)
                mask = np.zeros(self.D.shape[0], dtype=bool)
                mask[order] = True
                self._reach_from[a] = mask
            return self._reach_from[a]


class RspContext:
    """A graph with a fixed ``beta`` and a memo of absorbed systems per target.

    Parameters
    ----------
    graph : Graph
    beta : float
        Inverse temperature, ``> 0``.
    """

    def __init__(self, graph: Graph, beta: float):
        self.graph = graph
        self.beta = _check_beta(beta)
        self.p = reference_transitions(graph).data
        self.w = self.p * np.exp(-self.beta * graph.cost)
        self.W = graph._csr(self.w)
        self._systems: dict[int, AbsorbedSystem] = {}
        self._locks: dict[int, threading.Lock] = {}
        self._guard = threading.Lock()

    def absorbed(self, t: int) -> AbsorbedSystem:
        t = int(t)
        if not 0 <= t < self.graph.n:
            raise RspError(f"node {t} out of range")
        sys_ = self._systems.get(t)
        if sys_ is not None:
            return sys_
        with self._guard:
            lock = self._locks.setdefault(t, threading.Lock())
        with lock:
            if t not in self._systems:
                self._systems[t] = AbsorbedSystem(self, t)
            return self._systems[t]

    def _pair(self, s: int, t: int) -> AbsorbedSystem:
        s, t = int(s), int(t)
        if s == t:
            raise RspError("s and t must differ")
        if not 0 <= s < self.graph.n:
            raise RspError(f"node {s} out of range")
        system = self.absorbed(t)
        if not system.reach[s]:
            raise UnreachableError(f"node {t} is not reachable from node {s}")
        return system


@dataclass
class PairQuantities:
    s: int
    t: int
    partition: float
    log_partition: float
    expected_cost: float
    traversals: sp.csr_matrix | None = None
    visits: np.ndarray | None = None


def log_partition_function(ctx: RspContext, s: int, t: int) -> float:
    """``log Z_st``; ``-inf`` when ``t`` is unreachable from ``s``."""
    try:
        system = ctx._pair(s, t)
    except UnreachableError:
        return -math.inf
    return system.log_partition(s)


def partition_function(ctx: RspContext, s: int, t: int) -> float:
    """Total likelihood of hitting ``s``-``t`` paths; 0 if unreachable."""
    return math.exp(log_partition_function(ctx, s, t))


def hitting_partition_matrix(ctx: RspContext) -> np.ma.MaskedArray:
    """All-pairs partition functions from the dense fundamental matrix.

    ``Z = (I - W)^{-1}`` and ``Z_h = Z diag(Z)^{-1} - I``. Pairs with no
    connecting path are masked.
    """
    n = ctx.graph.n
    Z = np.linalg.inv(np.eye(n) - ctx.W.toarray())
    Zh = Z / np.diag(Z)[None, :] - np.eye(n)
    from .graph import hop_distances

    unreachable = ~np.isfinite(hop_distances(ctx.graph))
    np.fill_diagonal(unreachable, False)
    Zh[unreachable] = 0.0
    return np.ma.MaskedArray(Zh, mask=unreachable)


def expected_cost(ctx: RspContext, s: int, t: int) -> float:
    """Expected cost of an RSP path from ``s`` to ``t``."""
    system = ctx._pair(s, t)
    return float(system.expected_costs()[s])


def _traversal_data(system: AbsorbedSystem, s: int) -> sp.csr_matrix:
    y = system.solve_rows([s])[0]
    D = system.D
    rows = np.repeat(np.arange(D.shape[0]), np.diff(D.indptr))
    out = D.copy()
    out.data = y[rows] * D.data * system.x[D.indices] / system.x[s]
    return out


def expected_edge_traversals(ctx: RspContext, s: int, t: int) -> sp.csr_matrix:
    """Expected number of times each edge is used, as a sparse matrix."""
    return _traversal_data(ctx._pair(s, t), s)


def expected_node_visits(ctx: RspContext, s: int, t: int) -> np.ndarray:
    """Expected number of departures from each node; zero at ``t``."""
    system = ctx._pair(s, t)
    y = system.solve_rows([s])[0]
    v = y * system.x / system.x[s]
    v[system.t] = 0.0
    return v


def rsp_betweenness(ctx: RspContext, pairs: Iterable[tuple[int, int]]) -> np.ndarray:
    """Sum of expected node visits over ``(s, t)`` pairs."""
    pairs = list(pairs)
    if not pairs:
        raise RspError("pair set is empty")
    total = np.zeros(ctx.graph.n)
    by_t: dict[int, list[int]] = {}
    for s, t in pairs:
        ctx._pair(s, t)
        by_t.setdefault(int(t), []).append(int(s))
    for t, sources in by_t.items():
        system = ctx.absorbed(t)
        Y = system.solve_rows(sources)
        v = (Y * system.x[None, :] / system.x[sources][:, None]).sum(axis=0)
        v[t] = 0.0
        total += v
    return total


def biased_transitions(ctx: RspContext, t: int) -> sp.csr_matrix:
    """Transition matrix of the walk conditioned to hit ``t``.

    Rows of ``t`` and of nodes that cannot reach ``t`` are zero.
    """
    P = ctx.absorbed(t).biased()
    P.eliminate_zeros()
    return P


def pair_quantities(
    ctx: RspContext, s: int, t: int, traversals: bool = False, visits: bool = False
) -> PairQuantities:
    system = ctx._pair(s, t)
    lz = system.log_partition(s)
    q = PairQuantities(int(s), int(t), math.exp(lz), lz, float(system.expected_costs()[s]))
    if traversals:
        q.traversals = _traversal_data(system, s)
    if visits:
        q.visits = expected_node_visits(ctx, s, t)
    return q


def relative_entropy(ctx: RspContext, s: int, t: int) -> float:
    """Divergence of the RSP path law from the reference walk law.

    Uses ``J = -beta <c> - log Z``.
    """
    system = ctx._pair(s, t)
    j = -ctx.beta * float(system.expected_costs()[s]) - system.log_partition(s)
    return max(j, 0.0)


class EntropyInversion(NamedTuple):
    beta: float
    relative_entropy: float
    status: str


def beta_for_relative_entropy(
    graph: Graph,
    s: int,
    t: int,
    j0: float,
    bracket: tuple[float, float] = (1e-8, 1e3),
    tol: float = 1e-8,
    max_iter: int = 400,
) -> EntropyInversion:
    """Find ``beta`` whose path law has divergence ``j0`` by log-scale bisection.

    The divergence grows with ``beta``. If ``j0`` is at or below the value
    at the low bracket end, that end is returned with status
    ``"boundary-lo"``. A target above the value at the high end raises
    :class:`BracketError`.
    """
    if not j0 >= 0:
        raise RspError("j0 must be >= 0")
    lo, hi = map(float, bracket)
    if not 0 < lo < hi:
        raise RspError("invalid bracket")

    def J(b):
        return relative_entropy(RspContext(graph, b), s, t)

    j_lo, j_hi = J(lo), J(hi)
    if j0 <= j_lo + tol:
        return EntropyInversion(lo, j_lo, "boundary-lo")
    if j0 > j_hi + tol:
        raise BracketError(f"target divergence {j0} exceeds {j_hi} reached at beta={hi}")
    a, b = math.log(lo), math.log(hi)
    jm = j_hi
    for _ in range(max_iter):
        m = 0.5 * (a + b)
        jm = J(math.exp(m))
        if abs(jm - j0) < tol:
            break
        if jm < j0:
            a = m
        else:
            b = m
    else:
        raise BracketError("bisection did not reach tolerance")
    return EntropyInversion(math.exp(m), jm, "converged")


def reachable_pairs(graph: Graph) -> np.ndarray:
    """Boolean matrix: ``[s, t]`` true when some path leads from ``s`` to ``t``."""
    from .graph import hop_distances

    r = np.isfinite(hop_distances(graph))
    np.fill_diagonal(r, False)
    return r


__all__ = [
    "AbsorbedSystem",
    "BracketError",
    "EntropyInversion",
    "GraphError",
    "PairQuantities",
    "RspContext",
    "RspError",
    "UnreachableError",
    "beta_for_relative_entropy",
    "biased_transitions",
    "expected_cost",
    "expected_edge_traversals",
    "expected_node_visits",
    "hitting_partition_matrix",
    "likelihood_matrix",
    "log_partition_function",
    "pair_quantities",
    "partition_function",
    "reachable_pairs",
    "relative_entropy",
    "rsp_betweenness",
]
