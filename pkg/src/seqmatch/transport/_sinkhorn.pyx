# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled log-domain scaling loop; same contract as ``_sinkhorn_py.scaling_loop``."""

import numpy as np

from libc.math cimport exp, expm1, fabs, isinf, log, INFINITY


cdef inline void _sweep_rows(const double[:, ::1] D, const double[::1] log_b,
                             const double[::1] g, double eps, double kappa,
                             double[::1] out) noexcept nogil:
    cdef Py_ssize_t i, j, n = D.shape[0], m = D.shape[1]
    cdef double inv = 1.0 / eps, mx, s, x
    for i in range(n):
        mx = -INFINITY
        for j in range(m):
            x = log_b[j] + (g[j] - D[i, j]) * inv
            if x > mx:
                mx = x
        s = 0.0
        for j in range(m):
            s += exp(log_b[j] + (g[j] - D[i, j]) * inv - mx)
        out[i] = -kappa * eps * (mx + log(s))


cdef inline void _sweep_cols(const double[:, ::1] D, const double[::1] log_a,
                             const double[::1] f, double eps, double kappa,
                             double[::1] out) noexcept nogil:
    cdef Py_ssize_t i, j, n = D.shape[0], m = D.shape[1]
    cdef double inv = 1.0 / eps, mx, s, x
    for j in range(m):
        mx = -INFINITY
        for i in range(n):
            x = log_a[i] + (f[i] - D[i, j]) * inv
            if x > mx:
                mx = x
        s = 0.0
        for i in range(n):
            s += exp(log_a[i] + (f[i] - D[i, j]) * inv - mx)
        out[j] = -kappa * eps * (mx + log(s))


cdef inline double _lse_shift(const double[::1] log_w, const double[::1] pot,
                              double tau) noexcept nogil:
    cdef Py_ssize_t i, n = pot.shape[0]
    cdef double mx = -INFINITY, s = 0.0, x
    for i in range(n):
        x = log_w[i] - pot[i] / tau
        if x > mx:
            mx = x
    for i in range(n):
        s += exp(log_w[i] - pot[i] / tau - mx)
    return mx + log(s)


def scaling_loop(D, log_a, log_b, double lam, double tau, long max_iters,
                 double tol, bint balanced, long stage_iters=10):
    cdef const double[:, ::1] Dv = np.ascontiguousarray(D, dtype=np.float64)
    cdef const double[::1] la = np.ascontiguousarray(log_a, dtype=np.float64)
    cdef const double[::1] lb = np.ascontiguousarray(log_b, dtype=np.float64)
    cdef Py_ssize_t n = Dv.shape[0], m = Dv.shape[1], i, j
    f_arr = np.zeros(n)
    g_arr = np.zeros(m)
    fn_arr = np.zeros(n)
    gn_arr = np.zeros(m)
    cdef double[::1] f = f_arr, g = g_arr, fn = fn_arr, gn = gn_arr
    cdef double eps = lam, inv, kappa, resid, delta, shift
    cdef long it = 0, k = 0
    cdef bint converged = False, final
    if stage_iters > 0:
        eps = float(np.max(D) - np.min(D))
        if eps < lam:
            eps = lam
    with nogil:
        while it < max_iters:
            final = eps <= lam
            if final:
                eps = lam
            elif k == stage_iters:
                eps *= 0.5
                k = 0
                continue
            inv = 1.0 / eps
            kappa = 1.0 if isinf(tau) else tau / (tau + eps)
            it += 1
            k += 1
            _sweep_rows(Dv, lb, g, eps, kappa, fn)
            if final and balanced and k > 1:
                resid = 0.0
                for i in range(n):
                    resid += fabs(exp(la[i]) * expm1((f[i] - fn[i]) * inv))
                if resid < tol:
                    converged = True
                    break
            _sweep_cols(Dv, la, fn, eps, kappa, gn)
            if not balanced:
                # optimal dual translation; see the pure-Python loop
                shift = 0.5 * tau * (_lse_shift(la, fn, tau) - _lse_shift(lb, gn, tau))
                for i in range(n):
                    fn[i] += shift
                for j in range(m):
                    gn[j] -= shift
            delta = 0.0
            for i in range(n):
                if fabs(fn[i] - f[i]) > delta:
                    delta = fabs(fn[i] - f[i])
                f[i] = fn[i]
            for j in range(m):
                if fabs(gn[j] - g[j]) > delta:
                    delta = fabs(gn[j] - g[j])
                g[j] = gn[j]
            if final and not balanced and delta < tol:
                converged = True
                break
    return f_arr, g_arr, it, converged
