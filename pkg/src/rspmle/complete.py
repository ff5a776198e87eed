"""Likelihood and maximum-likelihood estimation from complete trajectories."""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .graph import Graph, reference_transitions
from .rsp import RspContext, RspError, _check_beta
from .sampler import Trajectory, as_trajectories

STATUSES = ("converged", "boundary-lo", "boundary-hi")


@dataclass
class MleResult:
    """Outcome of a one-dimensional search for ``beta``.

    ``status`` is ``"converged"`` for an interior solution, or
    ``"boundary-lo"`` / ``"boundary-hi"`` when the estimate sits on a
    bracket end.
    """

    beta_hat: float
    log_likelihood: float
    status: str
    bracket: tuple[float, float]
    evaluations: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bracket"] = list(self.bracket)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _check_bracket(bracket) -> tuple[float, float]:
    lo, hi = map(float, bracket)
    if not (math.isfinite(lo) and math.isfinite(hi) and 0 < lo < hi):
        raise RspError(f"invalid bracket ({lo}, {hi})")
    return lo, hi


def _group(paths: Sequence[Trajectory]) -> dict[int, list[Trajectory]]:
    by_t: dict[int, list[Trajectory]] = defaultdict(list)
    for p in paths:
        by_t[p.t].append(p)
    return by_t


def _path_terms(graph: Graph, paths: Sequence[Trajectory]):
    """Per-path log reference probability and cost."""
    logp = _log_reference(graph)
    lp = np.empty(len(paths))
    cost = np.empty(len(paths))
    for k, p in enumerate(paths):
        idx = p.edge_indices(graph)
        lp[k] = logp[idx].sum()
        cost[k] = graph.cost[idx].sum()
    return lp, cost


def _log_reference(graph: Graph) -> np.ndarray:
    key = "log_p_rw"
    if key not in graph._cache:
        graph._cache[key] = np.log(reference_transitions(graph).data)
    return graph._cache[key]


def log_likelihood_complete(graph: Graph, beta: float, omega: Iterable, ctx: RspContext | None = None) -> float:
    """Joint log-probability of complete hitting paths under the RSP law.

    Returns ``-inf`` when some path's target cannot be reached.
    """
    beta = _check_beta(beta)
    paths = as_trajectories(omega)
    if ctx is None:
        ctx = RspContext(graph, beta)
    lp, cost = _path_terms(graph, paths)
    total = float(lp.sum() - beta * cost.sum())
    for t, group in _group(paths).items():
        lz = ctx.absorbed(t).log_partition()
        for p in group:
            total -= lz[p.s]
    return total


def expected_cost_sum(ctx: RspContext, paths: Sequence[Trajectory]) -> float:
    """``sum_st K_st <c>_st`` over the pairs of ``paths``."""
    total = 0.0
    for t, group in _group(paths).items():
        ec = ctx.absorbed(t).expected_costs()
        total += sum(ec[p.s] for p in group)
    return total


def mle_beta_complete(
    graph: Graph,
    omega: Iterable,
    bracket: tuple[float, float] = (1e-6, 1e3),
    tol: float = 1e-6,
    max_iter: int = 200,
) -> MleResult:
    """Solve ``sum K_st <c>_st(beta) = sum of observed path costs`` for ``beta``.

    The left side is non-increasing in ``beta``, so bisection on ``log beta``
    brackets the unique root. When the difference keeps one sign over the
    whole bracket the matching end is returned with a boundary status.

    Parameters
    ----------
    graph : Graph
    omega : iterable of Trajectory or complete Observation
    bracket : (float, float)
        Search interval for ``beta``.
    tol : float
        Stop once ``|g| < tol * sum of observed costs``.
    """
    paths = as_trajectories(omega)
    if not paths:
        raise RspError("no trajectories")
    lo, hi = _check_bracket(bracket)
    _, cost = _path_terms(graph, paths)
    observed = float(cost.sum())
    evals = 0

    def g(b):
        nonlocal evals
        evals += 1
        return expected_cost_sum(RspContext(graph, b), paths) - observed

    def result(b, status):
        return MleResult(b, log_likelihood_complete(graph, b, paths), status, (lo, hi), evals)

    g_lo = g(lo)
    if g_lo <= 0:
        return result(lo, "boundary-lo")
    g_hi = g(hi)
    if g_hi >= 0:
        return result(hi, "boundary-hi")
    a, b = math.log(lo), math.log(hi)
    m = 0.5 * (a + b)
    for _ in range(max_iter):
        m = 0.5 * (a + b)
        gm = g(math.exp(m))
        if abs(gm) < tol * observed:
            break
        if gm > 0:
            a = m
        else:
            b = m
        if b - a < 1e-15:
            break
    return result(math.exp(m), "converged")


@dataclass(frozen=True)
class _Counts:
    """Sufficient statistics of complete paths: edge counts and per-pair counts."""

    edges: np.ndarray
    pairs: dict[int, dict[int, int]]


def _counts(graph: Graph, paths: Sequence[Trajectory]) -> _Counts:
    idx = [p.edge_indices(graph) for p in paths]
    edges = np.bincount(np.concatenate(idx), minlength=graph.n_edges).astype(np.float64)
    pairs: dict[int, dict[int, int]] = defaultdict(lambda: defaultdict(int))
    for p in paths:
        pairs[p.t][p.s] += 1
    return _Counts(edges, {t: dict(v) for t, v in pairs.items()})


def _gradient(graph: Graph, counts: _Counts, ctx: RspContext) -> np.ndarray:
    grad = -counts.edges
    for t, by_s in counts.pairs.items():
        system = ctx.absorbed(t)
        sources = sorted(by_s)
        Y = system.solve_rows(sources)
        k = np.array([by_s[s] for s in sources], dtype=np.float64)
        # expected traversals per edge: y_i * d_ij * x_j / x_s, summed with weights K_st
        yw = (k / system.x[sources]) @ Y
        grad = grad + yw[graph.src] * system.edge_weight * system.x[graph.dst]
    return grad


def _log_likelihood(graph: Graph, counts: _Counts, ctx: RspContext) -> float:
    total = float(counts.edges @ (_log_reference(graph) - ctx.beta * graph.cost))
    for t, by_s in counts.pairs.items():
        lz = ctx.absorbed(t).log_partition()
        total -= sum(k * lz[s] for s, k in by_s.items())
    return total


def edge_cost_gradient(graph: Graph, omega: Iterable, ctx: RspContext | None = None) -> np.ndarray:
    """Derivative of the complete-data log-likelihood in each edge cost at ``beta = 1``.

    Equals expected minus observed edge traversal counts, aligned with the
    graph's edge arrays.
    """
    paths = as_trajectories(omega)
    return _gradient(graph, _counts(graph, paths), ctx or RspContext(graph, 1.0))


@dataclass
class EdgeCostResult:
    costs: np.ndarray
    log_likelihood: float
    converged: bool
    iterations: int
    grad_norm: float
    history: list[float] = field(default_factory=list)


def mle_edge_costs(
    graph: Graph,
    omega: Iterable,
    tol: float = 1e-6,
    max_iter: int = 2000,
    step0: float = 1.0,
    min_cost: float = 1e-6,
) -> EdgeCostResult:
    """Experimental: edge costs maximizing the complete-data likelihood at ``beta = 1``.

    Projected gradient ascent with backtracking; costs are clamped at
    ``min_cost``. Convergence means the projected gradient's max-norm fell
    below ``tol``. Costs are identifiable only up to what the observed paths
    constrain.
    """
    paths = as_trajectories(omega)
    if not paths:
        raise RspError("no trajectories")
    counts = _counts(graph, paths)
    g = graph
    ll = _log_likelihood(g, counts, RspContext(g, 1.0))
    history = [ll]
    step = step0
    gnorm = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        grad = _gradient(g, counts, RspContext(g, 1.0))
        # components pushing against the clamp do not count
        active = ~((g.cost <= min_cost) & (grad < 0))
        gnorm = float(np.abs(grad[active]).max()) if active.any() else 0.0
        if gnorm < tol:
            return EdgeCostResult(np.array(g.cost), ll, True, it - 1, gnorm, history)
        while True:
            trial = np.maximum(g.cost + step * grad, min_cost)
            gt = g.with_costs(trial)
            lt = _log_likelihood(gt, counts, RspContext(gt, 1.0))
            if lt >= ll + 1e-4 * float(grad @ (trial - g.cost)):
                break
            step *= 0.5
            if step < 1e-14:
                return EdgeCostResult(np.array(g.cost), ll, False, it, gnorm, history)
        g, ll = gt, lt
        history.append(ll)
        step = min(step * 2.0, 1e3)
    return EdgeCostResult(np.array(g.cost), ll, False, it, gnorm, history)
