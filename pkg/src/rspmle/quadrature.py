"""Incomplete-observation likelihoods by quadrature over a resolvent.

The count weight ``1 / C(k, M)`` and its uniform-prior variant are Beta
integrals in an auxiliary variable ``u`` in (0, 1). Swapping sum and
integral turns the sum over hitting paths into an integral of products of
entries of ``R(u) = (I - u W)^-1`` restricted to walks that avoid the
target. One dense inverse per quadrature node serves every observation and
every target at once, so this pays off when many observations share a
small graph and the series would need many terms (small ``beta``).

The integral is taken in ``y = logit(u)`` after the map
``y = center + scale * sinh(tau)``. The inverse is evaluated on a coarse
grid in ``tau`` whose step is halved until two successive estimates agree
to ``tol``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import BarycentricInterpolator
from scipy.special import logsumexp, roots_laguerre

from .rsp import RspContext, RspError
from .sampler import Observation

_LAG_X, _LAG_W = roots_laguerre(80)
_LOG_LAG_W = np.log(_LAG_W)
_CANCEL = 1e-6


@dataclass(frozen=True)
class QuadratureConfig:
    """Controls for :func:`quadrature_log_likelihoods`.

    Parameters
    ----------
    tol : float
        Accept once successive halvings change every log-likelihood ``l``
        by less than ``tol * (1 + |l|)``.
    h0 : float
        Initial trapezoid step in ``tau``.
    max_halvings : int
        Give up (values come back as NaN) after this many halvings.
    center, scale : float
        The sinh map from ``tau`` to ``y``.
    order : int
        Points per local interpolation stencil for ``log g``.
    refine : int
        Fine-grid points per initial step.
    y_max : float
        Integrate over ``|y| <= y_max``.
    max_nodes : int
        Largest graph handled; each quadrature node costs a dense inverse.
    """

    tol: float = 1e-8
    h0: float = 0.2
    max_halvings: int = 4
    center: float = 2.0
    scale: float = 1.0
    order: int = 10
    refine: int = 32
    y_max: float = 45.0
    max_nodes: int = 2000

    def __post_init__(self):
        if not 0 < self.tol < 1:
            raise RspError("tol must lie in (0, 1)")
        if self.max_halvings < 1:
            raise RspError("max_halvings must be >= 1")
        if self.h0 <= 0 or self.scale <= 0 or self.y_max <= 0:
            raise RspError("h0, scale and y_max must be positive")


def log_h(M, y: float) -> np.ndarray:
    """``log H_M(u)`` with ``H_M(u) = int_0^{(1-u)/u} r^(M-1) / (1 + r) dr`` and ``u = expit(y)``.

    Vectorized over ``M``. For ``M >= 2`` the substitution
    ``r = e^-y e^(-x/M)`` leaves a smooth Laplace-type integral handled by
    Gauss-Laguerre.
    """
    M = np.atleast_1d(np.asarray(M, dtype=float))
    lg = -np.logaddexp(0.0, -y - _LAG_X[None, :] / M[:, None])
    out = -M * y - np.log(M) + logsumexp(lg + _LOG_LAG_W, axis=1)
    # M = 1 is closed form: log(log1p(e^-y))
    return np.where(M == 1, math.log(float(np.logaddexp(0.0, -y))), out)


@dataclass
class _Layout:
    """Flattened segment indices of a batch of observations."""

    a: np.ndarray
    b: np.ndarray
    t: np.ndarray
    owner: np.ndarray
    kind_node: np.ndarray
    M: np.ndarray
    m_unique: np.ndarray
    m_index: np.ndarray
    node: np.ndarray
    log_w: np.ndarray
    prior: str
    n_obs: int


def _layout(ctx: RspContext, observations: Sequence[Observation], count_prior: str) -> _Layout:
    a, b, t, owner, kn = [], [], [], [], []
    Ms = np.zeros(len(observations), dtype=np.int64)
    log_w = np.zeros(len(observations))
    node = np.zeros(len(observations), dtype=bool)
    W = ctx.W
    for k, o in enumerate(observations):
        if o.kind == "nodes":
            chain = [o.s, *map(int, o.obs), o.t]
            a += chain[:-1]
            b += chain[1:]
            node[k] = True
        elif o.kind == "edges":
            heads = [o.s] + [int(j) for _, j in o.obs]
            tails = [int(i) for i, _ in o.obs] + [o.t]
            a += heads
            b += tails
            log_w[k] = float(sum(math.log(W[int(i), int(j)]) for i, j in o.obs))
        else:
            raise RspError(f"quadrature handles node and edge observations, not {o.kind!r}")
        seg = len(o.obs) + 1
        t += [o.t] * seg
        owner += [k] * seg
        kn += [node[k]] * seg
        Ms[k] = len(o.obs)
    m_unique, m_index = np.unique(Ms, return_inverse=True)
    return _Layout(
        np.asarray(a, dtype=np.int64),
        np.asarray(b, dtype=np.int64),
        np.asarray(t, dtype=np.int64),
        np.asarray(owner, dtype=np.int64),
        np.asarray(kn, dtype=bool),
        Ms,
        m_unique,
        m_index,
        node,
        log_w,
        count_prior,
        len(observations),
    )


def _log_g(ctx: RspContext, Wd: np.ndarray, lay: _Layout, y: float) -> np.ndarray:
    """``log g(u)`` for every observation, ``g`` the embedding generating function."""
    n = Wd.shape[0]
    lu = -float(np.logaddexp(0.0, -y))
    u = math.exp(lu)
    R = np.linalg.inv(np.eye(n) - u * Wd)
    S = u * (ctx.W @ R)  # R - I, without cancellation
    a, b, t = lay.a, lay.b, lay.t
    Rat = R[a, t]
    Rtt = R[t, t]
    base = np.where(lay.kind_node, S[a, b], R[a, b])
    ent = base - Rat * S[t, b] / Rtt
    # entries that lost most digits to the subtraction are not trusted
    bad = ent <= _CANCEL * np.abs(base)
    ent = np.where(b == t, Rat / Rtt, ent)
    bad &= b != t
    with np.errstate(divide="ignore"):
        le = np.where(bad, np.nan, np.log(np.where(ent > 0, ent, 1.0)))
    logg = np.bincount(lay.owner, weights=le, minlength=lay.n_obs)
    # node chains count sub-path length k = L - 1, edge chains carry u per edge
    return logg + np.where(lay.node, -lu, lay.M * lu + lay.log_w)


def _log_law(lay: _Layout, y: np.ndarray) -> np.ndarray:
    """Log count-law kernel in ``y``, times ``du/dy``; shape ``(n_obs, len(y))``."""
    lu = -np.logaddexp(0.0, -y)
    l1u = -np.logaddexp(0.0, y)
    M = lay.M.astype(float)[:, None]
    if lay.prior == "given":
        return np.log(M) + M * l1u - (M - 1) * lu
    lh = np.stack([log_h(lay.m_unique, yy) for yy in y], axis=1)
    return np.log(M) + lh[lay.m_index] + l1u


def _local_basis(taus: np.ndarray, fine: np.ndarray, order: int) -> sp.csr_matrix:
    """Sparse matrix of local Lagrange weights from ``taus`` to ``fine``.

    Each fine point uses the ``order`` coarse nodes around its interval, so
    noise in far tails (where ``log g`` is huge and inaccurate) stays put.
    """
    n = len(taus)
    order = min(order, n)
    cell = np.clip(np.searchsorted(taus, fine, side="right") - 1, 0, n - 2)
    rows, cols, vals = [], [], []
    for c in np.unique(cell):
        lo = int(np.clip(c - (order - 1) // 2, 0, n - order))
        idx = np.arange(lo, lo + order)
        pts = np.flatnonzero(cell == c)
        basis = BarycentricInterpolator(taus[idx], np.eye(order))(fine[pts])
        rows.append(np.repeat(pts, order))
        cols.append(np.tile(idx, len(pts)))
        vals.append(basis.ravel())
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(len(fine), n)
    )


def _interp_integrate(taus, G, fine, law_f, order, tol):
    """Trapezoid over ``fine`` of ``exp(interp(G) + law_f)``, per observation.

    Fine points whose stencil touches a non-finite node are dropped; the
    result is NaN unless the integrand next to every dropped stretch is
    negligible.
    """
    L = _local_basis(taus, fine, order)
    bad = ~np.isfinite(G)
    Gz = np.where(bad, 0.0, G)
    Gf = (L @ Gz.T).T
    touched = (abs(L) @ bad.T.astype(float)).T > 0
    F = np.where(touched, -np.inf, Gf + law_f)
    hf = fine[1] - fine[0]
    est = logsumexp(F, axis=1) + math.log(hf)
    if touched.any():
        # values just inside the dropped stretches must be negligible
        width = max(1, int(round((taus[1] - taus[0]) / hf)))
        near = touched.copy()
        for k in range(1, width + 1):
            near[:, k:] |= touched[:, :-k]
            near[:, :-k] |= touched[:, k:]
        edge = np.where(near & ~touched, F, -np.inf).max(axis=1) + math.log(hf)
        with np.errstate(invalid="ignore"):
            est = np.where(edge - est > math.log(tol), np.nan, est)
    return est


def quadrature_log_likelihoods(
    ctx: RspContext,
    observations: Sequence[Observation],
    count_prior: str = "uniform",
    config: QuadratureConfig | None = None,
) -> np.ndarray:
    """Per-observation log-likelihoods; NaN where the quadrature is not trusted.

    ``log g`` is smooth in ``tau`` even when the integrand is sharply
    peaked (it is a sum of ``M + 1`` smooth logs), so it is computed on a
    coarse grid, interpolated with local polynomial stencils onto a fine
    grid and only then exponentiated. Infeasible observations
    are not screened here; pair this with the feasibility check of the
    series builder.
    """
    config = config or QuadratureConfig()
    if count_prior not in ("uniform", "given"):
        raise RspError("count_prior must be 'uniform' or 'given'")
    observations = list(observations)
    if not observations:
        return np.zeros(0)
    if ctx.graph.n > config.max_nodes:
        raise RspError(f"graph too large for dense quadrature ({ctx.graph.n} > {config.max_nodes})")
    lay = _layout(ctx, observations, count_prior)
    Wd = ctx.W.toarray()
    c, sc = config.center, config.scale

    def log_g(taus):
        if len(taus) == 0:
            return np.zeros((lay.n_obs, 0))
        return np.stack([_log_g(ctx, Wd, lay, c + sc * math.sinh(tau)) for tau in taus], axis=1)

    h = config.h0
    lo = math.ceil(math.asinh((-config.y_max - c) / sc) / h) * h
    hi = math.floor(math.asinh((config.y_max - c) / sc) / h) * h
    taus = np.linspace(lo, hi, int(round((hi - lo) / h)) + 1)
    G = log_g(taus)
    fine = np.linspace(lo, hi, (len(taus) - 1) * config.refine + 1)
    law_f = _log_law(lay, c + sc * np.sinh(fine)) + np.log(sc * np.cosh(fine))
    est = _interp_integrate(taus, G, fine, law_f, config.order, config.tol)
    done = np.zeros(lay.n_obs, dtype=bool)
    for _ in range(config.max_halvings):
        new = (taus[:-1] + taus[1:]) / 2
        G2 = log_g(new)
        merged = np.empty(len(taus) + len(new))
        merged[0::2], merged[1::2] = taus, new
        Gm = np.empty((lay.n_obs, len(merged)))
        Gm[:, 0::2], Gm[:, 1::2] = G, G2
        taus, G = merged, Gm
        nxt = _interp_integrate(taus, G, fine, law_f, config.order, config.tol)
        with np.errstate(invalid="ignore"):
            done = (np.abs(nxt - est) <= config.tol * (1.0 + np.abs(nxt))) | (np.isneginf(nxt) & np.isneginf(est))
        est = nxt
        if done.all():
            break
    # the end nodes must be negligible, or the y range was too short
    ends = np.maximum(G[:, 0] + law_f[:, 0], G[:, -1] + law_f[:, -1]) + math.log(fine[1] - fine[0])
    with np.errstate(invalid="ignore"):
        ok = done & ~(ends - est > math.log(config.tol))
    result = np.where(ok, est, np.nan)
    logz = np.array([ctx.absorbed(o.t).log_partition(o.s) for o in observations])
    return result - logz
