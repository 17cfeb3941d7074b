# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled tick loop for square-loss simulation windows.

Mirrors _square_fallback.run_square_window; the sequential tick dependence
cannot vectorize across time, so the hot loop lives here.
"""

import numpy as np

cimport numpy as cnp

BACKEND_NAME = "compiled"

cdef double _LIMIT = 1e12

cdef int DIFFUSION = 0
cdef int CONSENSUS = 1
cdef int CFG = 2
cdef int THA = 3


cdef void _combine(const double[:, ::1] a, double[:, ::1] src, double[:, ::1] dst,
                   int n, int m) noexcept nogil:
    # dst = a.T @ src
    cdef int k, j, l
    cdef double acc
    for k in range(n):
        for j in range(m):
            acc = 0.0
            for l in range(n):
                acc += a[l, k] * src[l, j]
            dst[k, j] = acc


cdef double _quad(double[::1] d, const double[:, ::1] r_h, int m) noexcept nogil:
    cdef int j, k
    cdef double acc = 0.0
    for j in range(m):
        for k in range(m):
            acc += d[j] * r_h[j, k] * d[k]
    return acc


cdef bint _bad(double[:, ::1] w, int rows, int m) noexcept nogil:
    cdef int k, j
    cdef double v
    for k in range(rows):
        for j in range(m):
            v = w[k, j]
            if v != v or v > _LIMIT or v < -_LIMIT:
                return True
    return False


def run_square_window(int variant,
                      double[:, ::1] w,
                      const double[:, ::1] a1,
                      const double[:, ::1] a2,
                      const double[:, ::1] c,
                      bint c_identity,
                      bint a1_identity,
                      bint a2_identity,
                      const double[::1] mu,
                      const double[:, :, ::1] feats,
                      const double[:, ::1] labels,
                      const double[:, ::1] wopt,
                      const double[:, ::1] r_h,
                      double[:, ::1] er_out,
                      double[:, ::1] pred_out,
                      double[:, ::1] filt_out):
    cdef int horizon = feats.shape[0]
    cdef int n = feats.shape[1]
    cdef int m = feats.shape[2]
    cdef int rows = w.shape[0]
    cdef int t, k, j, l
    cdef double mu_t, acc, resid, two_mu
    cdef double[:, ::1] phi = np.empty((n, m))
    cdef double[:, ::1] psi = np.empty((n, m))
    cdef double[:, ::1] rmat = np.empty((n, n))
    cdef double[::1] d = np.empty(m)
    cdef double[::1] wbar = np.empty(m)
    cdef int fail = -1

    with nogil:
        for t in range(horizon):
            mu_t = mu[t]
            two_mu = 2.0 * mu_t

            # ---- metrics on the pre-update weights -------------------
            if variant == CFG or variant == THA:
                if variant == CFG:
                    for j in range(m):
                        wbar[j] = w[0, j]
                else:
                    for j in range(m):
                        acc = 0.0
                        for k in range(n):
                            acc += w[k, j]
                        wbar[j] = acc / n
                for j in range(m):
                    d[j] = wopt[t, j] - wbar[j]
                acc = 0.0
                for j in range(m):
                    acc += d[j] * d[j]
                pred_out[t, 0] = acc
                er_out[t, 0] = _quad(d, r_h, m)
            else:
                for k in range(n):
                    for j in range(m):
                        d[j] = wopt[t, j] - w[k, j]
                    acc = 0.0
                    for j in range(m):
                        acc += d[j] * d[j]
                    pred_out[t, k] = acc
                    er_out[t, k] = _quad(d, r_h, m)

            # ---- update ----------------------------------------------
            if variant == CFG:
                for j in range(m):
                    d[j] = 0.0
                for k in range(n):
                    acc = 0.0
                    for j in range(m):
                        acc += feats[t, k, j] * w[0, j]
                    resid = labels[t, k] - acc
                    for j in range(m):
                        d[j] += resid * feats[t, k, j]
                for j in range(m):
                    w[0, j] += (two_mu / n) * d[j]
            elif variant == CONSENSUS:
                for k in range(n):
                    acc = 0.0
                    for j in range(m):
                        acc += feats[t, k, j] * w[k, j]
                    resid = labels[t, k] - acc
                    for j in range(m):
                        psi[k, j] = two_mu * resid * feats[t, k, j]
                _combine(a1, w, phi, n, m)
                for k in range(n):
                    for j in range(m):
                        w[k, j] = phi[k, j] + psi[k, j]
            elif variant == THA:
                for k in range(n):
                    acc = 0.0
                    for j in range(m):
                        acc += feats[t, k, j] * w[k, j]
                    resid = labels[t, k] - acc
                    for j in range(m):
                        w[k, j] += two_mu * resid * feats[t, k, j]
            else:  # DIFFUSION
                if a1_identity:
                    for k in range(n):
                        for j in range(m):
                            phi[k, j] = w[k, j]
                else:
                    _combine(a1, w, phi, n, m)
                if c_identity:
                    for k in range(n):
                        acc = 0.0
                        for j in range(m):
                            acc += feats[t, k, j] * phi[k, j]
                        resid = labels[t, k] - acc
                        for j in range(m):
                            psi[k, j] = phi[k, j] + two_mu * resid * feats[t, k, j]
                else:
                    for l in range(n):
                        for k in range(n):
                            acc = 0.0
                            for j in range(m):
                                acc += feats[t, l, j] * phi[k, j]
                            rmat[l, k] = c[l, k] * (labels[t, l] - acc)
                    for k in range(n):
                        for j in range(m):
                            acc = 0.0
                            for l in range(n):
                                acc += rmat[l, k] * feats[t, l, j]
                            psi[k, j] = phi[k, j] + two_mu * acc
                if a2_identity:
                    for k in range(n):
                        for j in range(m):
                            w[k, j] = psi[k, j]
                else:
                    _combine(a2, psi, w, n, m)

            # ---- metrics on the post-update weights ------------------
            if variant == CFG or variant == THA:
                if variant == CFG:
                    for j in range(m):
                        wbar[j] = w[0, j]
                else:
                    for j in range(m):
                        acc = 0.0
                        for k in range(n):
                            acc += w[k, j]
                        wbar[j] = acc / n
                acc = 0.0
                for j in range(m):
                    d[j] = wopt[t, j] - wbar[j]
                    acc += d[j] * d[j]
                filt_out[t, 0] = acc
            else:
                for k in range(n):
                    acc = 0.0
                    for j in range(m):
                        d[j] = wopt[t, j] - w[k, j]
                        acc += d[j] * d[j]
                    filt_out[t, k] = acc

            if _bad(w, rows, m):
                fail = t
                break

    return fail
