# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-iteration kernels (see ``_kernels_py`` for the reference versions)."""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport sin, cos, sqrt

cnp.import_array()


def rff_forward(const double[:, ::1] omega, const double[:, ::1] w, const double[::1] phases, const double[::1] times):
    cdef Py_ssize_t n_src = omega.shape[0], J = omega.shape[1], T = times.shape[0]
    cdef Py_ssize_t n, j, t
    cdef double c = sqrt(2.0 / J), th, wo, om, ww, ph
    values = np.zeros((n_src, T))
    deriv = np.zeros((n_src, T))
    cdef double[:, ::1] v = values
    cdef double[:, ::1] d = deriv
    for n in range(n_src):
        for j in range(J):
            om = omega[n, j]
            ww = w[n, j]
            wo = ww * om
            ph = phases[j]
            for t in range(T):
                th = om * times[t] + ph
                v[n, t] += ww * cos(th)
                d[n, t] -= wo * sin(th)
        for t in range(T):
            v[n, t] *= c
            d[n, t] *= c
    return values, deriv


def rff_backward(const double[:, ::1] omega, const double[:, ::1] w, const double[::1] phases, const double[::1] times,
                 g_val=None, g_der=None):
    cdef Py_ssize_t n_src = omega.shape[0], J = omega.shape[1], T = times.shape[0]
    cdef Py_ssize_t n, j, t
    cdef double c = sqrt(2.0 / J), th, sn, cs, om, ww, tt, gv, gd, acc_w, acc_o
    if g_val is None:
        g_val = np.zeros((n_src, T))
    if g_der is None:
        g_der = np.zeros((n_src, T))
    cdef const double[:, ::1] GV = np.ascontiguousarray(g_val, dtype=np.float64)
    cdef const double[:, ::1] GD = np.ascontiguousarray(g_der, dtype=np.float64)
    g_omega = np.zeros((n_src, J))
    g_w = np.zeros((n_src, J))
    g_times = np.zeros(T)
    cdef double[:, ::1] go = g_omega
    cdef double[:, ::1] gw = g_w
    cdef double[::1] gt = g_times
    for n in range(n_src):
        for j in range(J):
            om = omega[n, j]
            ww = w[n, j]
            acc_w = 0.0
            acc_o = 0.0
            for t in range(T):
                tt = times[t]
                th = om * tt + phases[j]
                sn = sin(th)
                cs = cos(th)
                gv = GV[n, t]
                gd = GD[n, t]
                acc_w += gv * cs - gd * om * sn
                acc_o -= gv * ww * tt * sn + gd * ww * (sn + om * tt * cs)
                gt[t] -= c * ww * om * (gv * sn + gd * om * cs)
            gw[n, j] = c * acc_w
            go[n, j] = c * acc_o
    return g_omega, g_w, g_times


def lik_residual_grad(const double[:, ::1] y, const double[:, ::1] s, const double[:, ::1] a, double inv_var,
                      int n_partitions=8, int n_threads=1):
    cdef Py_ssize_t P = y.shape[0], F = y.shape[1], n_src = s.shape[0]
    cdef Py_ssize_t k, p, v, n, lo, hi
    cdef int nparts = n_partitions if n_partitions > 0 else 1
    cdef double pred, res
    partial_sq = np.zeros(nparts)
    partial_ga = np.zeros((nparts, n_src, F))
    g_s = np.zeros((n_src, P))
    cdef double[::1] psq = partial_sq
    cdef double[:, :, ::1] pga = partial_ga
    cdef double[:, ::1] gs = g_s
    # Each partition owns a contiguous block of rows; partial sums are combined
    # in partition order below, so the result does not depend on n_threads.
    for k in prange(nparts, nogil=True, schedule="static", num_threads=n_threads):
        lo = (k * P) // nparts
        hi = ((k + 1) * P) // nparts
        for p in range(lo, hi):
            for v in range(F):
                pred = 0.0
                for n in range(n_src):
                    pred = pred + s[n, p] * a[n, v]
                res = y[p, v] - pred
                psq[k] += res * res
                for n in range(n_src):
                    gs[n, p] += a[n, v] * res
                    pga[k, n, v] += s[n, p] * res
    cdef double sq = 0.0
    g_a = np.zeros((n_src, F))
    cdef double[:, ::1] ga = g_a
    for k in range(nparts):
        sq += psq[k]
        for n in range(n_src):
            for v in range(F):
                ga[n, v] += pga[k, n, v]
    for n in range(n_src):
        for p in range(P):
            gs[n, p] *= inv_var
        for v in range(F):
            ga[n, v] *= inv_var
    return sq, g_s, g_a


def sqrt_grad_contract(const double[:, :, ::1] gt, const double[:, :, ::1] kt, const double[:, ::1] q,
                       const double[:, ::1] drow, const double[:, ::1] dcol,
                       const double[::1] row_vals, const double[::1] col_vals):
    cdef Py_ssize_t n_src = gt.shape[0], H = gt.shape[1], W = gt.shape[2]
    cdef Py_ssize_t n, i, k, j, l
    cdef double acc, cross, term_r = 0.0, term_c = 0.0, part
    for j in range(W):
        part = 0.0
        for i in range(H):
            for k in range(H):
                cross = 0.0
                for n in range(n_src):
                    cross += gt[n, i, j] * kt[n, k, j]
                part += drow[i, k] * cross / (q[i, j] + q[k, j])
        term_r += col_vals[j] * part
    for i in range(H):
        part = 0.0
        for j in range(W):
            for l in range(W):
                cross = 0.0
                for n in range(n_src):
                    cross += gt[n, i, j] * kt[n, i, l]
                part += dcol[j, l] * cross / (q[i, j] + q[i, l])
        term_c += row_vals[i] * part
    return term_r, term_c
