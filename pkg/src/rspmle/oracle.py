"""Brute-force reference values for small graphs.

Two independent evaluators of the defining path sums:

* :func:`enumerate_hitting_paths` lists every hitting path up to a length
  ``K`` by depth-first search; the oracle functions then sum over the list.
* :class:`LengthSums` groups the same sums by path length using dense
  matrix powers of the absorbed matrix, and convolves scalar sequences over
  the gaps between observations. It reaches long path lengths where
  enumeration is hopeless.

Neither uses linear solves or the block-chain propagation.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

from .graph import Graph, reference_transitions
from .sampler import Observation

PATH_CAP = 10_000_000


class OracleError(RuntimeError):
    """The requested enumeration exceeds its size cap."""


def absorbed_dense(ctx, t: int) -> np.ndarray:
    """``W`` with row ``t`` zeroed, as a dense array."""
    D = ctx.W.toarray()
    D[t, :] = 0.0
    return D


@dataclass
class PathEnumeration:
    """All hitting ``s``-``t`` paths of length at most ``K``.

    ``tail_bound`` bounds the likelihood mass of longer paths.
    """

    s: int
    t: int
    K: int
    paths: list[tuple[int, ...]]
    likelihoods: np.ndarray
    costs: np.ndarray
    tail_bound: float
    r: float


def hitting_path_counts(ctx, s: int, t: int, K: int) -> np.ndarray:
    """Number of hitting paths of each length ``0..K`` from 0/1 adjacency powers."""
    A = (absorbed_dense(ctx, t) > 0).astype(float)
    out = np.zeros(K + 1)
    row = np.zeros(A.shape[0])
    row[s] = 1.0
    for k in range(K + 1):
        out[k] = row[t] if k > 0 else 0.0
        row = row @ A
    return out


def depth_for_cap(ctx, s: int, t: int, cap: int, k_max: int = 200) -> int:
    """Largest ``K <= k_max`` whose hitting-path count stays within ``cap``."""
    counts = np.cumsum(hitting_path_counts(ctx, s, t, k_max))
    ok = np.flatnonzero(counts <= cap)
    return int(ok[-1]) if len(ok) else 0


def enumerate_hitting_paths(ctx, s: int, t: int, K: int, cap: int = PATH_CAP) -> PathEnumeration:
    """Depth-first listing of hitting paths of length ``1..K``.

    The tail bound is ``||e_s D^(K+1)||_1 / (1 - r)`` with ``D`` the
    absorbed matrix and ``r`` its largest row sum, which never exceeds
    ``r^(K+1) / (1 - r)``.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    graph = ctx.graph
    D = absorbed_dense(ctx, t)
    C = np.full_like(D, np.inf)
    C[graph.src, graph.dst] = graph.cost
    succ = [np.flatnonzero(D[i] > 0) for i in range(graph.n)]
    paths, lik, cost = [], [], []
    stack = [(s, (s,), 1.0, 0.0)]
    while stack:
        node, path, w, c = stack.pop()
        if node == t and len(path) > 1:
            paths.append(path)
            lik.append(w)
            cost.append(c)
            if len(paths) > cap:
                raise OracleError(f"more than {cap} paths up to length {K}")
            continue
        if len(path) - 1 >= K:
            continue
        for j in succ[node]:
            stack.append((int(j), path + (int(j),), w * D[node, j], c + C[node, j]))
    order = sorted(range(len(paths)), key=lambda k: (len(paths[k]), paths[k]))
    r = float(D.sum(axis=1).max())
    row = np.zeros(graph.n)
    row[s] = 1.0
    for _ in range(K + 1):
        row = row @ D
    tail = float(row.sum()) / (1.0 - r)
    return PathEnumeration(
        s, t, K,
        [paths[k] for k in order],
        np.array([lik[k] for k in order]),
        np.array([cost[k] for k in order]),
        min(tail, r ** (K + 1) / (1.0 - r)),
        r,
    )


def oracle_partition(pe: PathEnumeration) -> float:
    return float(pe.likelihoods.sum())


def oracle_expected_cost(pe: PathEnumeration) -> float:
    return float((pe.likelihoods * pe.costs).sum() / pe.likelihoods.sum())


def oracle_traversals(pe: PathEnumeration) -> dict[tuple[int, int], float]:
    z = pe.likelihoods.sum()
    out: dict[tuple[int, int], float] = {}
    for p, w in zip(pe.paths, pe.likelihoods):
        for e in zip(p[:-1], p[1:]):
            out[e] = out.get(e, 0.0) + w / z
    return out


def oracle_node_visits(pe: PathEnumeration, n: int) -> np.ndarray:
    z = pe.likelihoods.sum()
    v = np.zeros(n)
    for p, w in zip(pe.paths, pe.likelihoods):
        for i in p[:-1]:
            v[i] += w / z
    return v


def path_probabilities(pe: PathEnumeration) -> dict[tuple[int, ...], float]:
    z = pe.likelihoods.sum()
    return {p: w / z for p, w in zip(pe.paths, pe.likelihoods)}


def count_subsequences(sequence: Sequence, pattern: Sequence) -> int:
    """Ordered embeddings of ``pattern`` in ``sequence``, with multiplicity."""
    ways = [1] + [0] * len(pattern)
    for item in sequence:
        for m in range(len(pattern), 0, -1):
            if pattern[m - 1] == item:
                ways[m] += ways[m - 1]
    return ways[-1]


def _observation_weight(path, kind, obs, count_prior, model) -> float:
    if kind == "edges":
        seq = list(zip(path[:-1], path[1:]))
    else:
        seq = list(path[1:-1])
    k = len(seq)
    M = len(obs)
    if k < M:
        return 0.0
    n_obs = count_subsequences(seq, [tuple(o) if kind == "edges" else o for o in obs])
    if n_obs == 0:
        return 0.0
    if model is not None:
        p, q = model.p_mu, 1.0 - model.p_mu
        return (p**M / (q**M * (1.0 - q**M))) * q**k * n_obs
    w = n_obs / math.comb(k, M)
    return w / k if count_prior == "uniform" else w


def oracle_observation_likelihood(
    pe: PathEnumeration,
    observation: Observation,
    count_prior: str = "uniform",
    model=None,
) -> float:
    """Probability of a partial observation by summing over listed paths.

    Edge records count the path's edges; node records count its
    intermediate nodes ``path[1:-1]``. ``count_prior`` is ``"uniform"`` or
    ``"given"`` as in :mod:`rspmle.incomplete`; a binomial ``model`` applies
    its printed closed-form prefactor instead.
    """
    z = pe.likelihoods.sum()
    total = 0.0
    for p, w in zip(pe.paths, pe.likelihoods):
        total += w * _observation_weight(p, observation.kind, observation.obs, count_prior, model)
    return total / z


class LengthSums:
    """Path sums grouped by length, from dense powers of the absorbed matrix.

    Parameters
    ----------
    ctx : RspContext
    t : int
        Target.
    K : int, optional
        Largest power kept. By default powers are added until the mass of longer paths is
        below ``rel_tail`` times the partition sum for every source, or
        ``K`` reaches ``k_cap``.
    """

    def __init__(self, ctx, t: int, K: int | None = None, rel_tail: float = 1e-15, k_cap: int = 50_000):
        self.ctx = ctx
        self.t = t
        D = absorbed_dense(ctx, t)
        self.D = D
        self.r = float(D.sum(axis=1).max())
        n = D.shape[0]
        powers = [np.eye(n)]
        z = np.zeros(n)
        # grow until, for every source, the mass beyond K is negligible
        # against the partition sum accumulated so far
        while True:
            powers.append(powers[-1] @ D)
            z += powers[-1][:, t]
            k = len(powers) - 2
            if K is not None:
                if k >= K:
                    break
                continue
            tail = powers[-1].sum(axis=1) / (1.0 - self.r)
            live = z > 0
            if np.all(tail[live] <= rel_tail * z[live]) and np.all(tail[~live] <= rel_tail) or k >= k_cap:
                break
        self.K = len(powers) - 2
        self.P = np.array(powers)

    def _seq(self, i: int, j: int, shift: int = 0) -> np.ndarray:
        """``[D^(a+shift)]_ij`` for ``a = 0..K``."""
        return self.P[shift:shift + self.K + 1, i, j]

    def tail_mass(self, s: int) -> float:
        """Bound on the likelihood mass of hitting paths longer than ``K``."""
        return float(self.P[self.K + 1, s].sum()) / (1.0 - self.r)

    def partition(self, s: int) -> float:
        return float(self._seq(s, self.t)[1:].sum())

    def traversals(self, s: int) -> np.ndarray:
        """Expected edge traversals, dense ``n x n``."""
        z = self.partition(s)
        # sum over a + b <= K-1 of [D^a]_si w_ij [D^b]_jt
        u = self.P[: self.K, s, :]
        V = np.cumsum(self.P[: self.K, :, self.t], axis=0)[::-1]
        inner = u.T @ V
        return self.D * inner / z

    def expected_cost(self, s: int) -> float:
        g = self.ctx.graph
        nbar = self.traversals(s)
        return float((nbar[g.src, g.dst] * g.cost).sum())

    def observation_series(self, s: int, kind: str, obs: Sequence) -> np.ndarray:
        """``S(k)``: weighted count of embeddings over length-``k`` paths, ``k = 0..K``.

        For edge records ``k`` is the path length; for node records it is
        the length after the first step.
        """
        t = self.t
        M = len(obs)
        if kind == "edges":
            ends = [s] + [int(j) for _, j in obs]
            starts = [int(i) for i, _ in obs] + [t]
            shift = 0
            scale = float(np.prod([self.D[int(i), int(j)] for i, j in obs]))
        else:
            ends = [s] + [int(i) for i in obs]
            starts = [int(i) for i in obs] + [t]
            shift = 1
            scale = 1.0
        conv = np.array([1.0])
        for a, b in zip(ends, starts):
            conv = np.convolve(conv, self._seq(a, b, shift))[: self.K + 1]
        out = np.zeros(self.K + 1)
        out[M:] = scale * conv[: self.K + 1 - M]
        return out

    def observation_likelihood(self, s: int, observation: Observation, count_prior: str = "uniform", model=None) -> tuple[float, float]:
        """Probability of a partial observation and a bound on its truncation error."""
        S = self.observation_series(s, observation.kind, observation.obs)
        M = len(observation.obs)
        k = np.arange(self.K + 1, dtype=float)
        logc = np.array([_log_choose(x, M) for x in k])
        if model is not None:
            p, q = model.p_mu, 1.0 - model.p_mu
            log_pref = M * math.log(p) - M * math.log(q) - math.log1p(-(q**M))
            f = np.exp(log_pref + k * math.log(q))
        else:
            f = np.exp(-logc)
            if count_prior == "uniform":
                f = f / np.maximum(k, 1)
        f[:M] = 0.0
        z = self.partition(s)
        value = float((f * S).sum()) / z

        # A length-k path has at most C(k, M) embeddings and the mass of
        # length-k paths is at most ||e_s D^(K+1)||_1 r^(k-K-1).
        mass = float(self.P[self.K + 1, s].sum())
        if mass == 0.0:
            return value, 0.0
        if model is not None:
            # terms f(k) C(k, M) mass r^(k-K-1); successive terms have ratio
            # q r (k+1)/(k+1-M), decreasing towards q r < 1, so once it is
            # below 1 the rest is dominated by a geometric series
            tail = 0.0
            k = self.K + 1
            log_term = log_pref + k * math.log(q) + _log_choose(k, M) + math.log(mass)
            while True:
                term = math.exp(log_term)
                tail += term
                ratio = q * self.r * (k + 1) / (k + 1 - M)
                if ratio < 1.0 and term * ratio / (1.0 - ratio) < 1e-6 * tail:
                    tail += term * ratio / (1.0 - ratio)
                    break
                log_term += math.log(ratio)
                k += 1
        else:
            head = mass / (1.0 - self.r)
            tail = head / (self.K + 1) if count_prior == "uniform" else head
        return value, tail / z


def _log_choose(k: float, m: int) -> float:
    if k < m:
        return math.inf
    return math.lgamma(k + 1) - math.lgamma(m + 1) - math.lgamma(k - m + 1)


def resistance_distance(graph: Graph) -> np.ndarray:
    """Effective resistances with conductance ``a_ij`` on each undirected edge.

    Nodal analysis: ground one node, inject a unit current at another and
    read off its potential. Requires symmetric affinities.
    """
    A = graph.affinity_matrix().toarray()
    if not np.allclose(A, A.T):
        raise ValueError("resistance distance needs symmetric affinities")
    L = np.diag(A.sum(axis=1)) - A
    n = graph.n
    R = np.zeros((n, n))
    for t in range(n):
        keep = [i for i in range(n) if i != t]
        inv = np.linalg.inv(L[np.ix_(keep, keep)])
        for a, s in enumerate(keep):
            R[s, t] = inv[a, a]
    return R


def random_walk_hitting_cost(graph: Graph, t: int) -> np.ndarray:
    """Expected accumulated cost of the reference walk until it hits ``t``."""
    P = reference_transitions(graph).toarray()
    C = np.zeros_like(P)
    C[graph.src, graph.dst] = graph.cost
    P[t, :] = 0.0
    rhs = (P * C).sum(axis=1)
    return np.linalg.solve(np.eye(graph.n) - P, rhs)


def least_cost(graph: Graph, s: int, t: int) -> float:
    """Dijkstra with a binary heap."""
    adj: dict[int, list[tuple[int, float]]] = {}
    for i, j, _, c in graph.edges():
        adj.setdefault(i, []).append((j, c))
    dist = {s: 0.0}
    heap = [(0.0, s)]
    while heap:
        d, u = heapq.heappop(heap)
        if u == t:
            return d
        if d > dist.get(u, math.inf):
            continue
        for v, c in adj.get(u, []):
            nd = d + c
            if nd < dist.get(v, math.inf):
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return math.inf


def embeddings_by_positions(path: Sequence, pattern: Sequence) -> list[tuple[int, ...]]:
    """Explicit position tuples of every embedding (tiny inputs only)."""
    return [c for c in combinations(range(len(path)), len(pattern)) if all(path[p] == x for p, x in zip(c, pattern))]
