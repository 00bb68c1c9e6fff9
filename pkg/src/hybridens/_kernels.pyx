# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Semantics must match ``_kernels_py`` exactly."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs

cnp.import_array()

BACKEND = "cython"


def legendre_table(int lmax, x):
    """Fully normalized associated Legendre values, Condon-Shortley phase.

    Returns an array of shape ``(lmax + 1, lmax + 1, n)`` indexed ``[l, m, k]``
    holding ``sqrt((2l+1)/(4 pi) (l-m)!/(l+m)!) P_l^m(x_k)`` for ``m <= l``
    and zero above the diagonal.
    """
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef Py_ssize_t n = xv.shape[0]
    out = np.zeros((lmax + 1, lmax + 1, n), dtype=np.float64)
    cdef double[:, :, ::1] p = out
    cdef Py_ssize_t k
    cdef int l, m
    cdef double xk, s, pmm, a, b, fourpi = 4.0 * 3.141592653589793
    for k in range(n):
        xk = xv[k]
        s = sqrt(max(0.0, 1.0 - xk * xk))
        pmm = sqrt(1.0 / fourpi)
        p[0, 0, k] = pmm
        for m in range(0, lmax + 1):
            if m > 0:
                pmm = -sqrt((2.0 * m + 1.0) / (2.0 * m)) * s * pmm
                p[m, m, k] = pmm
            if m + 1 <= lmax:
                p[m + 1, m, k] = xk * sqrt(2.0 * m + 3.0) * pmm
            for l in range(m + 2, lmax + 1):
                a = sqrt((4.0 * l * l - 1.0) / (<double>l * l - <double>m * m))
                b = sqrt(((l - 1.0) * (l - 1.0) - <double>m * m)
                         / (4.0 * (l - 1.0) * (l - 1.0) - 1.0))
                p[l, m, k] = a * (xk * p[l - 1, m, k] - b * p[l - 2, m, k])
    return out


cdef inline void _tendency(double[:, :, ::1] x, double[:, :, ::1] dx,
                           double forcing, double coupling) noexcept nogil:
    cdef Py_ssize_t nv = x.shape[0], nh = x.shape[1], nw = x.shape[2]
    cdef Py_ssize_t v, h, w, hp, hm, vp
    for v in range(nv):
        vp = (v + 1) % nv
        for h in range(nh):
            hp = h + 1 if h + 1 < nh else h
            hm = h - 1 if h > 0 else h
            for w in range(nw):
                dx[v, h, w] = ((x[v, h, (w + 1) % nw] - x[v, h, (w - 2 + nw) % nw])
                               * x[v, h, (w - 1 + nw) % nw] - x[v, h, w] + forcing
                               + coupling * (x[v, hp, w] + x[v, hm, w] - 2.0 * x[v, h, w]))
                if nv > 1:
                    dx[v, h, w] += coupling * (x[vp, h, w] - x[v, h, w])


def l96_tendency(x, double forcing, double coupling=0.0):
    cdef double[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(np.asarray(xv))
    _tendency(xv, out, forcing, coupling)
    return out


def l96_integrate(x0, double forcing, double coupling, double dt,
                  int n_out, int n_sub, double bound):
    """RK4 integration sampled every ``n_sub`` steps.

    Returns ``(states, failed_at)`` where ``states`` has shape
    ``(n_out + 1, *x0.shape)`` and ``failed_at`` is the output index whose
    state first exceeded ``bound`` in magnitude, or -1.
    """
    x = np.array(x0, dtype=np.float64, order="C", copy=True)
    shape = x.shape
    out = np.zeros((n_out + 1,) + shape, dtype=np.float64)
    out[0] = x
    cdef double[:, :, ::1] xv = x
    cdef double[:, :, ::1] k1 = np.empty(shape), k2 = np.empty(shape)
    cdef double[:, :, ::1] k3 = np.empty(shape), k4 = np.empty(shape)
    cdef double[:, :, ::1] tmp = np.empty(shape)
    cdef double[:, :, :, ::1] ov = out
    cdef Py_ssize_t nv = shape[0], nh = shape[1], nw = shape[2]
    cdef Py_ssize_t i, s, v, h, w
    cdef double hh = 0.5 * dt, h6 = dt / 6.0, val
    cdef int failed = -1
    with nogil:
        for i in range(1, n_out + 1):
            for s in range(n_sub):
                _tendency(xv, k1, forcing, coupling)
                for v in range(nv):
                    for h in range(nh):
                        for w in range(nw):
                            tmp[v, h, w] = xv[v, h, w] + hh * k1[v, h, w]
                _tendency(tmp, k2, forcing, coupling)
                for v in range(nv):
                    for h in range(nh):
                        for w in range(nw):
                            tmp[v, h, w] = xv[v, h, w] + hh * k2[v, h, w]
                _tendency(tmp, k3, forcing, coupling)
                for v in range(nv):
                    for h in range(nh):
                        for w in range(nw):
                            tmp[v, h, w] = xv[v, h, w] + dt * k3[v, h, w]
                _tendency(tmp, k4, forcing, coupling)
                for v in range(nv):
                    for h in range(nh):
                        for w in range(nw):
                            xv[v, h, w] = xv[v, h, w] + h6 * (
                                k1[v, h, w] + 2.0 * (k2[v, h, w] + k3[v, h, w]) + k4[v, h, w])
            for v in range(nv):
                for h in range(nh):
                    for w in range(nw):
                        val = xv[v, h, w]
                        ov[i, v, h, w] = val
                        if failed < 0 and not (fabs(val) <= bound):
                            failed = i
            if failed >= 0:
                break
    return out, failed


def fair_crps_points(members, truth):
    """Per-point fair CRPS for ``members`` of shape (K, ...) and ``truth`` of shape (...).

    The ordered-pair sum is evaluated from sorted members in O(K log K).
    """
    members = np.asarray(members, dtype=np.float64)
    cdef double[:, ::1] xs = np.ascontiguousarray(np.sort(members.reshape(members.shape[0], -1), axis=0))
    cdef double[::1] y = np.ascontiguousarray(truth, dtype=np.float64).ravel()
    cdef Py_ssize_t K = xs.shape[0], n = xs.shape[1]
    if K < 2:
        raise ValueError("fair CRPS needs at least two members")
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] ov = out
    cdef Py_ssize_t i, m
    cdef double skill, pair, xm
    with nogil:
        for i in range(n):
            skill = 0.0
            pair = 0.0
            for m in range(K):
                xm = xs[m, i]
                skill += fabs(xm - y[i])
                # sum_{m,m'} |x_m - x_m'| = 2 sum_m (2m - K + 1) x_(m) for sorted x
                pair += (2.0 * m - K + 1.0) * xm
            ov[i] = skill / K - (2.0 * pair) / (2.0 * K * (K - 1.0))
    return out
