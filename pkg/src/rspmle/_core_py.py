"""Pure numpy versions of the compiled kernels, with identical semantics."""

from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln

LAW_UNIFORM, LAW_GIVEN, LAW_GEOMETRIC = 0, 1, 2
_LN2 = math.log(2.0)
_LN10 = math.log(10.0)


def _log_choose(k, m):
    return gammaln(k + 1.0) - gammaln(m + 1.0) - gammaln(k - m + 1.0)


def _log_weight(law, k, M, log_q):
    if law == LAW_UNIFORM:
        return -math.log(k) - _log_choose(k, M)
    if law == LAW_GIVEN:
        return -_log_choose(k, M)
    return k * log_q


def _log_sum(logs: np.ndarray) -> float:
    logs = np.asarray(logs, dtype=np.float64)
    logs = logs[np.isfinite(logs)]
    if logs.size == 0:
        return -math.inf
    top = logs.max()
    return float(top + math.log(np.exp(logs - top).sum()))


def _log_add(a: float, b: float) -> float:
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    top = max(a, b)
    return top + math.log(math.exp(a - top) + math.exp(b - top))


def chain_series(indptr, indices, data, t, seed, cpl_src, cpl_dst, cpl_w, G, gamma,
                 law, log_q, tol, max_terms, rescale):
    """Weighted series of a block upper-bidiagonal chain operator.

    ``G[:, m] * exp(gamma[m])`` bounds the unweighted completion sum from
    segment ``m``; since the weights decrease in ``k`` the remainder after
    step ``k`` is at most ``f(k+1) * sum_m <v_m, G_m>``. Each segment keeps
    its own log scale.

    Returns ``(log_value, terms, log_tail, status)``; status 0 converged,
    1 term cap reached, 2 nothing representable left to reach ``(M, t)``.
    """
    n = len(seed)
    M = len(cpl_src)
    S = M + 1
    DT = sp.csr_matrix((data, indices, indptr), shape=(n, n)).T.tocsr()
    V = np.zeros((n, S))
    V[:, 0] = seed
    V[t, 0] = 0.0
    smax = np.zeros(S)
    smax[0] = V[:, 0].max()
    lsc = np.zeros(S)
    cin = np.zeros(S)
    m_lo, m_hi, k = 0, 0, 0
    acc = -math.inf
    drop = -math.inf
    bsum = -math.inf
    status = 1
    while k < max_terms:
        m_top = m_hi + 1 if m_hi < M else M
        for m in range(m_lo + 1, m_top + 1):
            cin[m] = 0.0
            val = V[cpl_src[m - 1], m - 1]
            if val == 0.0:
                continue
            lin = math.log(val) + lsc[m - 1]
            lcur = math.log(smax[m]) + lsc[m] if smax[m] > 0.0 else -math.inf
            if lin > lcur:
                if smax[m] > 0.0:
                    d = math.exp(lsc[m] - lin)
                    V[:, m] *= d
                    smax[m] *= d
                lsc[m] = lin
            cin[m] = math.exp(lin - lsc[m])
        Vn = np.zeros((n, S))
        Vn[:, m_lo:m_hi + 1] = DT @ V[:, m_lo:m_hi + 1]
        for m in range(m_lo + 1, m_top + 1):
            val = cin[m]
            if val == 0.0:
                continue
            i = cpl_src[m - 1]
            if cpl_dst[m - 1] >= 0:
                Vn[cpl_dst[m - 1], m] += val * cpl_w[m - 1]
            else:
                a, b = indptr[i], indptr[i + 1]
                np.add.at(Vn[:, m], indices[a:b], val * data[a:b])
        V = Vn
        m_hi = m_top
        k += 1

        if m_hi == M and k >= M and V[t, M] > 0.0:
            acc = _log_add(acc, math.log(V[t, M]) + _log_weight(law, k, M, log_q) + lsc[M])
        V[t, :] = 0.0

        ms = np.arange(m_lo, m_hi + 1)
        block = V[:, m_lo:m_hi + 1]
        smax[ms] = block.max(axis=0)
        dots = np.zeros(S)
        dots[ms] = np.einsum("im,im->m", block, G[:, m_lo:m_hi + 1])
        bsum = -math.inf
        if smax[ms].max() == 0.0:
            status = 0
            break
        with np.errstate(divide="ignore"):
            lf = _log_weight(law, max(k + 1, M), M, log_q)
            seg = np.log(dots[ms]) + lf + gamma[ms] + lsc[ms]
        bsum = _log_sum(seg)
        if bsum == -math.inf and acc == -math.inf and drop == -math.inf:
            # live mass but no representable completion: underflow
            status = 2
            break
        if acc > -math.inf:
            lt = math.log(tol) + acc
            while m_lo < m_hi:
                trial = drop
                if dots[m_lo] > 0.0:
                    trial = _log_add(drop, seg[m_lo - ms[0]])
                if trial > lt - _LN10:
                    break
                drop = trial
                m_lo += 1
            if bsum <= lt - 0.1:
                status = 0
                break

        for m in range(m_lo, m_hi + 1):
            if smax[m] > 0.0 and (smax[m] < rescale or smax[m] > 1.0 / rescale):
                e = math.frexp(smax[m])[1]
                V[:, m] = np.ldexp(V[:, m], -e)
                smax[m] = math.ldexp(smax[m], -e)
                lsc[m] += e * _LN2

    return acc, k, _log_add(bsum, drop), status


def sample_walk(indptr, indices, cum, start, t, u, out):
    """Advance a walk from ``start`` using one uniform per step.

    Writes visited nodes to ``out`` and returns ``(steps, reached)``.
    """
    node = int(start)
    k = 0
    limit = min(len(u), len(out))
    while node != t and k < limit:
        lo, hi = indptr[node], indptr[node + 1]
        # first entry whose cumulative value exceeds u
        p = lo + int(np.searchsorted(cum[lo:hi], u[k], side="right"))
        node = int(indices[min(p, hi - 1)])
        out[k] = node
        k += 1
    return k, node == t
