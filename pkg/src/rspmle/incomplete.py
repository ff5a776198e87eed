"""Likelihoods of partially observed trajectories and the search for ``beta``.

An observation fixes ``s``, ``t`` and an ordered list of ``M`` observed
edges or intermediate nodes. Its likelihood is a weighted sum over hitting
paths of the number of ways the observations embed in the path, which
equals a weighted power series of a block upper-bidiagonal operator with
``M + 1`` copies of the absorbed matrix on the diagonal and one coupling
block per observation. The series is evaluated by propagating ``M + 1``
row vectors (see :func:`chain_log_sum`); the block matrix is never built.

Weight laws for a path (edges) or sub-path after the first step (nodes) of
length ``k``:

``"uniform"``
    ``1 / (k * C(k, M))``: the number of observations is uniform on
    ``1 .. k`` and the positions are a uniform subset.
``"given"``
    ``1 / C(k, M)``: the count ``M`` is taken as given. With ``M = 1`` this
    is the single-observation law ``1 / k``.
``"geometric"``
    ``q ** k``, used by the binomial observation model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize_scalar

from . import _kernels
from .complete import MleResult, _check_bracket, log_likelihood_complete
from .graph import Graph
from .rsp import AbsorbedSystem, RspContext, RspError, _lu
from .quadrature import QuadratureConfig, quadrature_log_likelihoods
from .sampler import Observation

LAWS = {"uniform": _kernels.LAW_UNIFORM, "given": _kernels.LAW_GIVEN, "geometric": _kernels.LAW_GEOMETRIC}


class SeriesCapError(RspError):
    """The term cap was reached before the tail bound met the tolerance."""

    def __init__(self, message: str, log_value: float, log_tail: float):
        super().__init__(message)
        self.log_value = log_value
        self.log_tail = log_tail


class SeriesUnderflowError(RspError):
    """Every surviving term underflowed: the likelihood is below double range."""


class InconsistentDataError(RspError):
    """Every candidate ``beta`` gives the data zero likelihood."""


@dataclass(frozen=True)
class SeriesConfig:
    """Truncation controls for the block-chain series.

    Parameters
    ----------
    tol : float
        Stop once a bound on the remaining terms is below ``tol`` times the
        accumulated value.
    max_terms : int
        Hard cap on propagation steps.
    rescale : float
        Renormalize the propagated vectors when their max falls below this.
    """

    tol: float = 1e-12
    max_terms: int = 1_000_000
    rescale: float = 1e-250

    def __post_init__(self):
        if not 0 < self.tol < 1:
            raise RspError("tol must lie in (0, 1)")
        if self.max_terms < 1:
            raise RspError("max_terms must be >= 1")


@dataclass(frozen=True)
class BinomialObservationModel:
    """Each eligible position is observed independently with probability ``p_mu``."""

    p_mu: float

    def __post_init__(self):
        if not 0 < self.p_mu < 1:
            raise RspError("p_mu must lie in (0, 1)")

    @property
    def q_mu(self) -> float:
        return 1.0 - self.p_mu


@dataclass(frozen=True)
class BlockChainOperator:
    """Coupling structure of one observation for target ``t``.

    ``src[m]`` is the node whose departure records observation ``m``.
    ``dst[m]`` is the edge head for edge observations and ``-1`` for node
    observations, which couple the whole row of ``src[m]``. ``seed`` is the
    starting row vector in the shifted frame.
    """

    t: int
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    seed: np.ndarray

    @property
    def M(self) -> int:
        return len(self.src)


@dataclass(frozen=True)
class SeriesResult:
    log_value: float
    terms: int
    log_tail: float


def _edge_weight(graph: Graph, system: AbsorbedSystem, i: int, j: int) -> float:
    k = graph.edge_index(i, j)
    if k < 0:
        raise RspError(f"({i},{j}) is not an edge")
    return float(system.edge_weight[k])


def build_operator(ctx: RspContext, s: int, t: int, kind: str, obs: Sequence) -> BlockChainOperator | None:
    """Coupling arrays for an observation, or ``None`` if it is impossible.

    Impossibility (a zero-weight coupling or an observation order no path
    can realize) is detected by reachability in the absorbed graph.
    """
    s, t = int(s), int(t)
    if s == t:
        raise RspError("s and t must differ")
    if kind not in ("edges", "nodes"):
        raise RspError(f"kind must be 'edges' or 'nodes', got {kind!r}")
    if len(obs) == 0:
        raise RspError("an observation needs at least one element")
    graph = ctx.graph
    system = ctx.absorbed(t)
    n = graph.n
    M = len(obs)
    src = np.empty(M, dtype=np.int64)
    dst = np.full(M, -1, dtype=np.int64)
    weight = np.zeros(M)
    if kind == "edges":
        for m, (i, j) in enumerate(obs):
            i, j = int(i), int(j)
            if i == t:
                raise RspError("observed edges must not leave the target")
            src[m], dst[m] = i, j
            weight[m] = _edge_weight(graph, system, i, j)
        seed = np.zeros(n)
        seed[s] = 1.0
    else:
        for m, i in enumerate(obs):
            i = int(i)
            if i == t:
                raise RspError("the target cannot be an observed intermediate node")
            if not 0 <= i < n:
                raise RspError(f"node {i} out of range")
            src[m] = i
        seed = system.D[s].toarray().ravel()
    if not system.reach[s] or np.any(weight[dst >= 0] == 0.0):
        return None
    # chain feasibility: each coupling must be reachable from the previous one
    here = _support_reach(system, seed)
    for m in range(M):
        if not here[src[m]]:
            return None
        if dst[m] >= 0:
            here = system.reachable_from(dst[m])
        else:
            row = system.D[src[m]]
            here = _support_reach(system, row.toarray().ravel())
    if not here[t]:
        return None
    return BlockChainOperator(t, src, dst, weight, seed)


def block_chain_terms(ctx: RspContext, s: int, t: int, kind: str, obs: Sequence, K: int) -> np.ndarray:
    """``[e_s Q^k]_(M, t)`` for ``k = 0..K`` by plain propagation on the raw ``W``.

    No gauge, rescaling or truncation: a reference for checking the series
    machinery on small inputs. For node records the start vector is row
    ``s`` of ``W``, so ``k`` counts steps after the first.
    """
    s, t = int(s), int(t)
    W = ctx.W.tolil(copy=True)
    W[t, :] = 0.0
    W = W.tocsr()
    n = W.shape[0]
    M = len(obs)
    V = np.zeros((M + 1, n))
    if kind == "edges":
        V[0, s] = 1.0
    elif kind == "nodes":
        V[0] = W[s].toarray().ravel()
    else:
        raise RspError(f"kind must be 'edges' or 'nodes', got {kind!r}")
    out = np.zeros(K + 1)
    for k in range(K + 1):
        out[k] = V[M, t]
        nxt = np.asarray((W.T @ V.T).T)
        for m, o in enumerate(obs):
            if kind == "edges":
                i, j = int(o[0]), int(o[1])
                nxt[m + 1, j] += V[m, i] * W[i, j]
            else:
                i = int(o)
                nxt[m + 1] += V[m, i] * W[i].toarray().ravel()
        V = nxt
    return out


def _support_reach(system: AbsorbedSystem, v: np.ndarray) -> np.ndarray:
    mask = np.zeros(len(v), dtype=bool)
    for u in np.flatnonzero(v > 0):
        mask |= system.reachable_from(int(u))
    return mask


def completion_bounds(ctx: RspContext, op: BlockChainOperator) -> tuple[np.ndarray, np.ndarray]:
    """Unweighted completion sums per segment, ``G[:, m] * exp(gamma[m])``.

    Column ``m`` holds, for each node, the sum over continuations from
    segment ``m`` to ``(M, t)`` of path weight times the number of ways to
    place the remaining observations. Computed by back-substitution with
    the cached absorbed factorization; each column is scaled to max 1.
    """
    system = ctx.absorbed(op.t)
    n = system.D.shape[0]
    M = op.M
    G = np.zeros((n, M + 1))
    gamma = np.zeros(M + 1)
    col = system.x.copy()
    col[op.t] = 1.0
    G[:, M] = col
    for m in range(M - 1, -1, -1):
        i = op.src[m]
        rhs = np.zeros(n)
        if op.dst[m] >= 0:
            rhs[i] = op.weight[m] * col[op.dst[m]]
        else:
            rhs[i] = float((system.D[i] @ col)[0])
        col = system.solve(rhs)
        top = col.max()
        if top > 0:
            col = col / top
            gamma[m] = gamma[m + 1] + math.log(top)
        else:
            gamma[m] = gamma[m + 1]
        G[:, m] = col
    return G, gamma


def chain_log_sum(
    ctx: RspContext,
    op: BlockChainOperator,
    law: str = "uniform",
    q: float | None = None,
    config: SeriesConfig | None = None,
) -> SeriesResult:
    """``log sum_k f(k) [seed Q^k]_(M, t)`` in the shifted frame of ``op.t``."""
    config = config or SeriesConfig()
    system = ctx.absorbed(op.t)
    code = LAWS[law]
    log_q = math.log(q) if code == _kernels.LAW_GEOMETRIC else 0.0
    D = system.D
    G, gamma = completion_bounds(ctx, op)
    log_value, terms, log_tail, status = _kernels.chain_series(
        D.indptr.astype(np.int64),
        D.indices.astype(np.int64),
        D.data,
        op.t,
        op.seed,
        op.src,
        op.dst,
        op.weight,
        G,
        gamma,
        code,
        log_q,
        config.tol,
        config.max_terms,
        config.rescale,
    )
    if status == 2:
        raise SeriesUnderflowError("the observation likelihood underflows at this beta")
    if status != 0:
        raise SeriesCapError(
            f"series not converged after {terms} terms", log_value, log_tail
        )
    return SeriesResult(log_value, terms, log_tail)


def _observation_log_likelihood(ctx, s, t, kind, obs, law, config) -> float:
    op = build_operator(ctx, s, t, kind, obs)
    if op is None:
        return -math.inf
    res = chain_log_sum(ctx, op, law, config=config)
    return res.log_value - math.log(ctx.absorbed(t).x[s])


def one_edge_log_likelihood(ctx: RspContext, s: int, t: int, edge: tuple[int, int], config: SeriesConfig | None = None) -> float:
    """Log-probability that one uniformly chosen edge of the path is ``edge``."""
    return _observation_log_likelihood(ctx, s, t, "edges", [edge], "given", config)


def one_node_log_likelihood(ctx: RspContext, s: int, t: int, node: int, config: SeriesConfig | None = None) -> float:
    """Log-probability that one uniformly chosen intermediate node is ``node``.

    Intermediate nodes are the path positions ``1 .. L-1``; paths of
    length 1 expose none and contribute nothing.
    """
    return _observation_log_likelihood(ctx, s, t, "nodes", [node], "given", config)


def multi_edge_log_likelihood(
    ctx: RspContext,
    s: int,
    t: int,
    edges: Sequence[tuple[int, int]],
    count_prior: str = "uniform",
    config: SeriesConfig | None = None,
) -> float:
    """Log-likelihood of an ordered edge subsequence.

    ``count_prior="uniform"`` includes the probability of observing
    ``M`` edges when the count is uniform on ``1 .. L``;
    ``count_prior="given"`` conditions on ``M``.
    """
    if count_prior not in ("uniform", "given"):
        raise RspError("count_prior must be 'uniform' or 'given'")
    return _observation_log_likelihood(ctx, s, t, "edges", list(edges), count_prior, config)


def multi_node_log_likelihood(
    ctx: RspContext,
    s: int,
    t: int,
    nodes: Sequence[int],
    count_prior: str = "uniform",
    config: SeriesConfig | None = None,
) -> float:
    """Log-likelihood of an ordered subsequence of intermediate nodes.

    Same conventions as :func:`multi_edge_log_likelihood`, with the count
    uniform on ``1 .. L-1``.
    """
    if count_prior not in ("uniform", "given"):
        raise RspError("count_prior must be 'uniform' or 'given'")
    return _observation_log_likelihood(ctx, s, t, "nodes", list(nodes), count_prior, config)


def _q_solver(system: AbsorbedSystem, q: float):
    key = ("q", q)
    cache = system.__dict__.setdefault("_qlu", {})
    if key not in cache:
        Dl = system.D[system.nodes][:, system.nodes]
        cache[key] = _lu(sp.identity(len(system.nodes), format="csc") - q * Dl)
    lu = cache[key]

    def solve(b):
        return system._expand(lu.solve(b[system.nodes]))

    return solve


def geometric_chain_log_sum(ctx: RspContext, op: BlockChainOperator, q: float) -> float:
    """``log sum_k q^k [seed Q^k]_(M, t)`` by back-substitution through the blocks.

    Each block solve uses ``(I - q D)``; the coupling blocks carry a factor
    ``q`` each.
    """
    system = ctx.absorbed(op.t)
    solve = _q_solver(system, q)
    D = system.D
    b = np.zeros(D.shape[0])
    b[op.t] = 1.0
    col = solve(b)
    for m in range(op.M - 1, -1, -1):
        i = op.src[m]
        rhs = np.zeros_like(col)
        if op.dst[m] >= 0:
            rhs[i] = q * op.weight[m] * col[op.dst[m]]
        else:
            rhs[i] = q * float((D[i] @ col)[0])
        col = solve(rhs)
    total = float(op.seed @ col)
    return math.log(total) if total > 0 else -math.inf


def binomial_log_likelihood(
    ctx: RspContext,
    model: BinomialObservationModel,
    s: int,
    t: int,
    obs: Sequence,
    kind: str = "edges",
    method: str = "solve",
    config: SeriesConfig | None = None,
) -> float:
    """Log-likelihood under the binomial observation model.

    Returns ``M log p - M log q - log(1 - q^M) + log(sum_k q^k [Q^k]_(s, Mn+t)) - log Z_st``.
    ``method="series"`` evaluates the same sum by truncated propagation
    instead of linear solves.
    """
    op = build_operator(ctx, s, t, kind, obs)
    if op is None:
        return -math.inf
    q = model.q_mu
    if method == "solve":
        lv = geometric_chain_log_sum(ctx, op, q)
    elif method == "series":
        lv = chain_log_sum(ctx, op, "geometric", q=q, config=config).log_value
    else:
        raise RspError("method must be 'solve' or 'series'")
    M = op.M
    pre = M * math.log(model.p_mu) - M * math.log(q) - math.log1p(-(q**M))
    return pre + lv - math.log(ctx.absorbed(t).x[s])


def binomial_multi_edge_log_likelihood(
    ctx: RspContext,
    model: BinomialObservationModel,
    s: int,
    t: int,
    edges: Sequence[tuple[int, int]],
    method: str = "solve",
) -> float:
    return binomial_log_likelihood(ctx, model, s, t, list(edges), "edges", method)


def observation_log_likelihood(
    ctx: RspContext,
    o: Observation,
    count_prior: str = "uniform",
    model: BinomialObservationModel | None = None,
    config: SeriesConfig | None = None,
) -> float:
    """Log-likelihood of one observation of any kind."""
    if o.kind == "complete":
        return log_likelihood_complete(ctx.graph, ctx.beta, [o], ctx=ctx)
    if model is not None:
        return binomial_log_likelihood(ctx, model, o.s, o.t, o.obs, o.kind, config=config)
    return _observation_log_likelihood(ctx, o.s, o.t, o.kind, list(o.obs), count_prior, config)


METHODS = ("auto", "series", "quadrature")

# exp(-beta * cost) must stay representable in the unscaled dense inverse
_DENSE_LOG_RANGE = 700.0


def _quadrature_suitable(ctx: RspContext, partial: list[Observation], config: QuadratureConfig) -> bool:
    """Whether the dense route is safe and likely cheaper than the series."""
    n = ctx.graph.n
    if n > config.max_nodes or not partial:
        return False
    targets = {o.t for o in partial}
    span = max(float(np.max(np.where(ctx.absorbed(t).reach, ctx.absorbed(t).phi, 0.0))) for t in targets)
    if ctx.beta * span > _DENSE_LOG_RANGE or ctx.W.data.min(initial=1.0) <= 0.0:
        return False
    # rough cost model: series ~ sum (M+1)^2 * nnz, dense ~ n^3 per node
    series = sum((o.M + 1) ** 2 for o in partial) * ctx.W.nnz
    return series > 3.0 * n**3


def log_likelihood_incomplete(
    graph: Graph,
    beta: float,
    omega: Iterable[Observation],
    count_prior: str = "uniform",
    model: BinomialObservationModel | None = None,
    config: SeriesConfig | None = None,
    method: str = "auto",
    quadrature: QuadratureConfig | None = None,
) -> float:
    """Sum of per-observation log-likelihoods; complete members use the exact path law.

    Parameters
    ----------
    method : {"auto", "series", "quadrature"}
        How partial observations are evaluated under the ``"uniform"`` and
        ``"given"`` count laws. ``"quadrature"`` uses one dense inverse per
        node of a shared quadrature (see :mod:`rspmle.quadrature`) and falls
        back to the series for any observation it cannot certify. ``"auto"``
        picks it for small graphs with long observations. The binomial
        model always uses its own solver.
    """
    if method not in METHODS:
        raise RspError(f"method must be one of {METHODS}")
    ctx = RspContext(graph, beta)
    omega = list(omega)
    complete = [o for o in omega if o.kind == "complete"]
    total = log_likelihood_complete(graph, beta, complete, ctx=ctx) if complete else 0.0
    partial = [o for o in omega if o.kind != "complete"]
    for o in partial:
        if o.empty:
            raise RspError("observation has no observed elements")
    if total == -math.inf:
        return total
    quadrature = quadrature or QuadratureConfig()
    use_quad = model is None and (
        method == "quadrature" or (method == "auto" and _quadrature_suitable(ctx, partial, quadrature))
    )
    if use_quad and partial:
        feasible = [build_operator(ctx, o.s, o.t, o.kind, o.obs) is not None for o in partial]
        if not all(feasible):
            return -math.inf
        values = quadrature_log_likelihoods(ctx, partial, count_prior, quadrature)
        for o, v in zip(partial, values):
            total += v if np.isfinite(v) else observation_log_likelihood(ctx, o, count_prior, None, config)
        return total
    for o in partial:
        total += observation_log_likelihood(ctx, o, count_prior, model, config)
        if total == -math.inf:
            return total
    return total


def likelihood_curve(
    graph: Graph,
    omega: Iterable[Observation],
    betas: Sequence[float],
    **kwargs,
) -> list[tuple[float, float]]:
    """``(beta, log L)`` rows over a grid."""
    betas = [float(b) for b in betas]
    if not betas:
        raise RspError("empty beta grid")
    omega = list(omega)
    return [(b, log_likelihood_incomplete(graph, b, omega, **kwargs)) for b in betas]


def mle_beta_incomplete(
    graph: Graph,
    omega: Iterable[Observation],
    bracket: tuple[float, float] = (1e-3, 1e2),
    grid_points: int = 13,
    rtol: float = 1e-4,
    scan_cutoff: float | None = None,
    **kwargs,
) -> MleResult:
    """Maximize the incomplete-data likelihood over ``beta``.

    A log-spaced grid over ``bracket`` locates the best point; bounded Brent
    search on ``log beta`` between its neighbours refines it to relative
    tolerance ``rtol``. If the optimum sits on a bracket end the status says
    so.

    Parameters
    ----------
    scan_cutoff : float, optional
        Scan the grid from the high end down and stop once the
        log-likelihood has fallen this many units below the best value seen.
        Saves the costly small-``beta`` evaluations when the likelihood is
        unimodal. ``None`` scans the whole grid.

    A grid point where some observation's likelihood underflows counts as
    zero likelihood.
    **kwargs
        Passed to :func:`log_likelihood_incomplete`.
    """
    omega = list(omega)
    if not omega:
        raise RspError("no observations")
    lo, hi = _check_bracket(bracket)
    if grid_points < 3:
        raise RspError("grid_points must be >= 3")
    evals = 0
    cache: dict[float, float] = {}

    def f(logb):
        nonlocal evals
        if logb not in cache:
            evals += 1
            try:
                cache[logb] = log_likelihood_incomplete(graph, math.exp(logb), omega, **kwargs)
            except SeriesUnderflowError:
                # far from any plausible optimum; treat as zero likelihood
                cache[logb] = -math.inf
        return cache[logb]

    grid = np.linspace(math.log(lo), math.log(hi), grid_points)
    values = np.full(grid_points, -np.inf)
    best = -np.inf
    for k in range(grid_points - 1, -1, -1):
        values[k] = f(float(grid[k]))
        best = max(best, values[k])
        if scan_cutoff is not None and best > -np.inf and values[k] < best - scan_cutoff:
            break
    if not np.isfinite(best):
        raise InconsistentDataError("the data have zero likelihood on the whole grid")
    kb = int(np.nanargmax(values))
    a = float(grid[max(kb - 1, 0)])
    b = float(grid[min(kb + 1, grid_points - 1)])
    tol = math.log1p(rtol)
    minimize_scalar(lambda x: -f(x), bounds=(a, b), method="bounded", options={"xatol": tol / 2})
    # best evaluated point within the refined interval, including ends
    cands = [(v, x) for x, v in cache.items() if a - 1e-12 <= x <= b + 1e-12]
    ll, xb = max(cands)
    status = "converged"
    glo, ghi = float(grid[0]), float(grid[-1])
    if abs(xb - ghi) <= tol:
        xb, ll, status = ghi, f(ghi), "boundary-hi"
    elif abs(xb - glo) <= tol:
        xb, ll, status = glo, f(glo), "boundary-lo"
    return MleResult(math.exp(xb), ll, status, (lo, hi), evals)
