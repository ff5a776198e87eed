# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: block-chain series propagation and biased-walk sampling."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, lgamma, frexp, ldexp, INFINITY

cnp.import_array()

cdef enum:
    LAW_UNIFORM = 0
    LAW_GIVEN = 1
    LAW_GEOMETRIC = 2


cdef inline double log_choose(double k, double m) nogil:
    return lgamma(k + 1.0) - lgamma(m + 1.0) - lgamma(k - m + 1.0)


cdef inline double log_weight(int law, long k, int M, double log_q) nogil:
    if law == LAW_UNIFORM:
        return -log(<double>k) - log_choose(k, M)
    elif law == LAW_GIVEN:
        return -log_choose(k, M)
    return k * log_q


cdef inline void log_add(double *mant, double *lsc, double val, double vlog) nogil:
    # (*mant) * exp(*lsc) += val * exp(vlog)
    if val <= 0.0:
        return
    if mant[0] == 0.0:
        mant[0] = val
        lsc[0] = vlog
    elif vlog > lsc[0]:
        mant[0] = mant[0] * exp(lsc[0] - vlog) + val
        lsc[0] = vlog
    else:
        mant[0] += val * exp(vlog - lsc[0])


cdef inline double log_of(double mant, double lsc) nogil:
    if mant <= 0.0:
        return -INFINITY
    return log(mant) + lsc


def chain_series(
    const long[::1] indptr,
    const long[::1] indices,
    const double[::1] data,
    long t,
    const double[::1] seed,
    const long[::1] cpl_src,
    const long[::1] cpl_dst,
    const double[::1] cpl_w,
    const double[:, ::1] G,
    const double[::1] gamma,
    int law,
    double log_q,
    double tol,
    long max_terms,
    double rescale,
):
    """Weighted series of a block upper-bidiagonal chain operator.

    ``G[:, m] * exp(gamma[m])`` bounds the unweighted completion sum from
    segment ``m``; since the weights decrease in ``k`` the remainder after
    step ``k`` is at most ``f(k+1) * sum_m <v_m, G_m>``. Each segment keeps
    its own log scale, so segments many orders of magnitude apart coexist.

    Returns ``(log_value, terms, log_tail, status)``; status 0 converged,
    1 term cap reached, 2 nothing representable left to reach ``(M, t)``.
    """
    cdef Py_ssize_t n = seed.shape[0]
    cdef int M = cpl_src.shape[0]
    cdef int S = M + 1
    cdef cnp.ndarray[double, ndim=1] buf_a = np.zeros(n * S)
    cdef cnp.ndarray[double, ndim=1] buf_b = np.zeros(n * S)
    cdef double *V = <double *> buf_a.data
    cdef double *Vn = <double *> buf_b.data
    cdef double *tmp
    cdef double[::1] dots = np.zeros(S)
    cdef double[::1] smax = np.zeros(S)
    cdef double[::1] lsc = np.zeros(S)
    cdef double[::1] cin = np.zeros(S)
    cdef Py_ssize_t i, j, p, m
    cdef int m_lo = 0, m_hi = 0, m_top, e
    cdef long k = 0
    cdef double acc = 0.0, acc_l = 0.0, drop = 0.0, drop_l = 0.0
    cdef double d, val, vmax, bsum = 0.0, bsum_l = 0.0, lt, lf, lin, lcur
    cdef double trial, trial_l
    cdef int status = 1

    for i in range(n):
        V[i * S] = seed[i]
        if seed[i] > smax[0] and i != t:
            smax[0] = seed[i]
    V[t * S] = 0.0

    with nogil:
        while k < max_terms:
            m_top = m_hi + 1 if m_hi < M else M
            # coupling values in the receiving segment's scale; a segment
            # is rebased when the incoming mass dominates its own
            for m in range(m_lo + 1, m_top + 1):
                cin[m] = 0.0
                val = V[cpl_src[m - 1] * S + m - 1]
                if val == 0.0:
                    continue
                lin = log(val) + lsc[m - 1]
                lcur = log(smax[m]) + lsc[m] if smax[m] > 0.0 else -INFINITY
                if lin > lcur:
                    if smax[m] > 0.0:
                        d = exp(lsc[m] - lin)
                        for i in range(n):
                            V[i * S + m] *= d
                        smax[m] *= d
                    lsc[m] = lin
                cin[m] = exp(lin - lsc[m])
            for i in range(n):
                for m in range(m_lo, m_top + 1):
                    Vn[i * S + m] = 0.0
            for i in range(n):
                for p in range(indptr[i], indptr[i + 1]):
                    d = data[p]
                    if d == 0.0:
                        continue
                    j = indices[p]
                    for m in range(m_lo, m_hi + 1):
                        Vn[j * S + m] += d * V[i * S + m]
            for m in range(m_lo + 1, m_top + 1):
                val = cin[m]
                if val == 0.0:
                    continue
                i = cpl_src[m - 1]
                if cpl_dst[m - 1] >= 0:
                    Vn[cpl_dst[m - 1] * S + m] += val * cpl_w[m - 1]
                else:
                    for p in range(indptr[i], indptr[i + 1]):
                        Vn[indices[p] * S + m] += val * data[p]
            tmp = V
            V = Vn
            Vn = tmp
            m_hi = m_top
            k += 1

            if m_hi == M and k >= M:
                log_add(&acc, &acc_l, V[t * S + M], log_weight(law, k, M, log_q) + lsc[M])
            for m in range(m_lo, m_hi + 1):
                V[t * S + m] = 0.0

            vmax = 0.0
            for m in range(m_lo, m_hi + 1):
                dots[m] = 0.0
                smax[m] = 0.0
            for i in range(n):
                for m in range(m_lo, m_hi + 1):
                    val = V[i * S + m]
                    if val > smax[m]:
                        smax[m] = val
                    dots[m] += val * G[i, m]
            for m in range(m_lo, m_hi + 1):
                if smax[m] > vmax:
                    vmax = smax[m]
            bsum = 0.0
            bsum_l = 0.0
            if vmax == 0.0:
                status = 0
                break

            # bound on everything still to come, absolute log scale
            lf = log_weight(law, k + 1 if k + 1 > M else M, M, log_q)
            for m in range(m_lo, m_hi + 1):
                log_add(&bsum, &bsum_l, dots[m], lf + gamma[m] + lsc[m])
            if bsum == 0.0 and acc == 0.0 and drop == 0.0:
                # live mass but no representable completion: underflow
                status = 2
                break
            if acc > 0.0:
                lt = log(tol) + log_of(acc, acc_l)
                # retire low segments while their combined bound stays below tol/10
                while m_lo < m_hi:
                    trial = drop
                    trial_l = drop_l
                    log_add(&trial, &trial_l, dots[m_lo], lf + gamma[m_lo] + lsc[m_lo])
                    if log_of(trial, trial_l) > lt - 2.302585092994046:
                        break
                    drop = trial
                    drop_l = trial_l
                    m_lo += 1
                if log_of(bsum, bsum_l) <= lt - 0.1:
                    status = 0
                    break

            for m in range(m_lo, m_hi + 1):
                if smax[m] > 0.0 and (smax[m] < rescale or smax[m] > 1.0 / rescale):
                    frexp(smax[m], &e)
                    for i in range(n):
                        V[i * S + m] = ldexp(V[i * S + m], -e)
                    smax[m] = ldexp(smax[m], -e)
                    lsc[m] += e * 0.6931471805599453

    log_add(&bsum, &bsum_l, drop, drop_l)
    return log_of(acc, acc_l), k, log_of(bsum, bsum_l), status


def sample_walk(
    const long[::1] indptr,
    const long[::1] indices,
    const double[::1] cum,
    long start,
    long t,
    const double[::1] u,
    long[::1] out,
):
    """Advance a walk from ``start`` using one uniform per step.

    Writes visited nodes to ``out`` and returns ``(steps, reached)``; stops
    early when ``u`` or ``out`` is exhausted.
    """
    cdef Py_ssize_t k = 0, nu = u.shape[0], nout = out.shape[0]
    cdef long node = start, lo, hi, mid
    cdef double r
    with nogil:
        while node != t and k < nu and k < nout:
            r = u[k]
            lo = indptr[node]
            hi = indptr[node + 1] - 1
            while lo < hi:
                mid = (lo + hi) >> 1
                if cum[mid] > r:
                    hi = mid
                else:
                    lo = mid + 1
            node = indices[lo]
            out[k] = node
            k += 1
    return k, node == t
