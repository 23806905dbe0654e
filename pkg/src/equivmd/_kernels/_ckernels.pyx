# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the functions in ``_pykernels``.

Same inputs, same recipe, same NaN-on-failure convention; the Python
wrapper in ``equivmd._kernels`` guarantees contiguous float64/intp input.
"""

import numpy as np
from libc.math cimport sqrt, fabs, isfinite, NAN
from libc.stdlib cimport malloc, free
from scipy.special.cython_special cimport ndtri
from scipy.special.cython_special cimport ndtr as _ndtr

cdef double PIVOT_TOL = 1e-12
cdef double BCA_DENOM_TOL = 1e-8


cdef inline double ndtr(double x) noexcept nogil:
    return _ndtr(x)


cdef int chol(const double* a, double* low, int p, double floor) noexcept nogil:
    cdef int i, j, k
    cdef double s, piv
    for i in range(p * p):
        low[i] = 0.0
    for j in range(p):
        s = 0.0
        for k in range(j):
            s += low[j * p + k] * low[j * p + k]
        piv = a[j * p + j] - s
        if not (piv > floor):
            return -1
        low[j * p + j] = sqrt(piv)
        for i in range(j + 1, p):
            s = 0.0
            for k in range(j):
                s += low[i * p + k] * low[j * p + k]
            low[i * p + j] = (a[i * p + j] - s) / low[j * p + j]
    return 0


cdef double solve_sq(const double* low, const double* v, double* y, int p) noexcept nogil:
    cdef int i, k
    cdef double s, out = 0.0
    for i in range(p):
        s = v[i]
        for k in range(i):
            s -= low[i * p + k] * y[k]
        y[i] = s / low[i * p + i]
        out += y[i] * y[i]
    return out


cdef double max_diag(const double* a, int p) noexcept nogil:
    cdef int i
    cdef double m = a[0]
    for i in range(1, p):
        if a[i * p + i] > m:
            m = a[i * p + i]
    return m


cdef struct Work:
    int p
    double* cov
    double* low
    double* mean
    double* y


cdef int work_alloc(Work* w, int p) noexcept nogil:
    w.p = p
    w.cov = <double*> malloc(p * p * sizeof(double))
    w.low = <double*> malloc(p * p * sizeof(double))
    w.mean = <double*> malloc(p * sizeof(double))
    w.y = <double*> malloc(p * sizeof(double))
    if w.cov == NULL or w.low == NULL or w.mean == NULL or w.y == NULL:
        return -1
    return 0


cdef void work_free(Work* w) noexcept nogil:
    free(w.cov)
    free(w.low)
    free(w.mean)
    free(w.y)


def boot_pooled(const double[:, ::1] xt, const double[:, ::1] xr,
                const Py_ssize_t[:, ::1] idx_t, const Py_ssize_t[:, ::1] idx_r,
                const double[::1] d):
    cdef Py_ssize_t B = idx_t.shape[0]
    cdef int n_t = <int> idx_t.shape[1]
    cdef int n_r = <int> idx_r.shape[1]
    cdef int p = <int> xt.shape[1]
    dm_arr = np.empty(B)
    mg_arr = np.empty(B)
    cdef double[::1] dm = dm_arr
    cdef double[::1] mg = mg_arr
    cdef double* mt = <double*> malloc(p * sizeof(double))
    cdef double* mr = <double*> malloc(p * sizeof(double))
    cdef double* diff = <double*> malloc(p * sizeof(double))
    cdef double* row = <double*> malloc(p * sizeof(double))
    cdef Work w
    cdef Py_ssize_t b
    cdef int i, j, k, dof = n_t + n_r - 2
    cdef Py_ssize_t r
    if work_alloc(&w, p) != 0 or mt == NULL or mr == NULL or diff == NULL or row == NULL:
        raise MemoryError()
    with nogil:
        for b in range(B):
            for i in range(p):
                mt[i] = 0.0
                mr[i] = 0.0
            for k in range(n_t):
                r = idx_t[b, k]
                for i in range(p):
                    mt[i] += xt[r, i]
            for k in range(n_r):
                r = idx_r[b, k]
                for i in range(p):
                    mr[i] += xr[r, i]
            for i in range(p):
                mt[i] /= n_t
                mr[i] /= n_r
                diff[i] = mt[i] - mr[i]
            for i in range(p * p):
                w.cov[i] = 0.0
            for k in range(n_t):
                r = idx_t[b, k]
                for i in range(p):
                    row[i] = xt[r, i] - mt[i]
                for i in range(p):
                    for j in range(i + 1):
                        w.cov[i * p + j] += row[i] * row[j]
            for k in range(n_r):
                r = idx_r[b, k]
                for i in range(p):
                    row[i] = xr[r, i] - mr[i]
                for i in range(p):
                    for j in range(i + 1):
                        w.cov[i * p + j] += row[i] * row[j]
            for i in range(p):
                for j in range(i + 1):
                    w.cov[i * p + j] /= dof
                    w.cov[j * p + i] = w.cov[i * p + j]
            if chol(w.cov, w.low, p, PIVOT_TOL * max_diag(w.cov, p)) != 0:
                dm[b] = NAN
                mg[b] = NAN
                continue
            dm[b] = solve_sq(w.low, diff, w.y, p)
            mg[b] = solve_sq(w.low, &d[0], w.y, p)
    work_free(&w)
    free(mt)
    free(mr)
    free(diff)
    free(row)
    return dm_arr, mg_arr


cdef double paired_stat(const double* c, const double* m1, const double* m2,
                        const double* d, double floor, Work* w) noexcept nogil:
    """Statistic from centred weighted moments; NaN when the covariance fails."""
    cdef int p = w.p
    cdef int i, j
    cdef double q
    # chol reads only the lower triangle
    for i in range(p):
        w.mean[i] = c[i] + m1[i]
        for j in range(i + 1):
            w.cov[i * p + j] = 0.5 * (m2[i * p + j] - m1[i] * m1[j])
    if chol(w.cov, w.low, p, floor) != 0:
        return NAN
    q = solve_sq(w.low, w.mean, w.y, p)
    return q - solve_sq(w.low, d, w.y, p)


cdef struct Fit:
    int n
    int p
    double* c       # p
    double* z       # n * p, centred rows
    double* m0      # p * p
    double* g1      # p
    double* g2      # p * p
    double* m1      # p scratch
    double* m2      # p * p scratch
    double* t1      # n
    double* t2      # n
    double sum_delta
    double floor
    double t0
    double sig
    double a
    double z0
    int bad


cdef int fit_alloc(Fit* f, int n, int p) noexcept nogil:
    f.n = n
    f.p = p
    f.c = <double*> malloc(p * sizeof(double))
    f.z = <double*> malloc(n * p * sizeof(double))
    f.m0 = <double*> malloc(p * p * sizeof(double))
    f.g1 = <double*> malloc(p * sizeof(double))
    f.g2 = <double*> malloc(p * p * sizeof(double))
    f.m1 = <double*> malloc(p * sizeof(double))
    f.m2 = <double*> malloc(p * p * sizeof(double))
    f.t1 = <double*> malloc(n * sizeof(double))
    f.t2 = <double*> malloc(n * sizeof(double))
    if (f.c == NULL or f.z == NULL or f.m0 == NULL or f.g1 == NULL or f.g2 == NULL
            or f.m1 == NULL or f.m2 == NULL or f.t1 == NULL or f.t2 == NULL):
        return -1
    return 0


cdef void fit_free(Fit* f) noexcept nogil:
    free(f.c)
    free(f.z)
    free(f.m0)
    free(f.g1)
    free(f.g2)
    free(f.m1)
    free(f.m2)
    free(f.t1)
    free(f.t2)


cdef double fit_along(Fit* f, double tau, const double* d, Work* w) noexcept nogil:
    cdef int p = f.p
    cdef int i
    cdef double s = 1.0 + tau * f.sum_delta
    for i in range(p):
        f.m1[i] = (tau * f.g1[i]) / s
    for i in range(p * p):
        f.m2[i] = (f.m0[i] + tau * f.g2[i]) / s
    return paired_stat(f.c, f.m1, f.m2, d, f.floor, w)


cdef void fit_data(Fit* f, const double[:, ::1] x, const Py_ssize_t[:, ::1] idx, Py_ssize_t b,
                   const double* d, double eps, Work* w) noexcept nogil:
    cdef int n = f.n
    cdef int p = f.p
    cdef int i, j, k
    cdef Py_ssize_t r
    cdef double ep = eps / n
    cdef double tp, tm, zi, ss, s3, s2, cq, bhat, curv, arg, dl
    f.bad = 0
    for i in range(p):
        f.c[i] = 0.0
    for k in range(n):
        r = idx[b, k]
        for i in range(p):
            f.c[i] += x[r, i]
    for i in range(p):
        f.c[i] /= n
    for i in range(p * p):
        f.m0[i] = 0.0
    for k in range(n):
        r = idx[b, k]
        for i in range(p):
            f.z[k * p + i] = x[r, i] - f.c[i]
        for i in range(p):
            for j in range(p):
                f.m0[i * p + j] += f.z[k * p + i] * f.z[k * p + j]
    for i in range(p * p):
        f.m0[i] /= n
    f.floor = PIVOT_TOL * 0.5 * max_diag(f.m0, p)
    for i in range(p):
        f.m1[i] = 0.0
    f.t0 = paired_stat(f.c, f.m1, f.m0, d, f.floor, w)
    if not isfinite(f.t0):
        f.bad = 1
        return
    ss = 0.0
    s3 = 0.0
    s2 = 0.0
    for k in range(n):
        for i in range(p):
            f.m1[i] = ep * f.z[k * p + i]
            for j in range(i + 1):
                f.m2[i * p + j] = (1 - ep) * f.m0[i * p + j] + ep * f.z[k * p + i] * f.z[k * p + j]
        tp = paired_stat(f.c, f.m1, f.m2, d, f.floor, w)
        for i in range(p):
            f.m1[i] = -ep * f.z[k * p + i]
            for j in range(i + 1):
                f.m2[i * p + j] = (1 + ep) * f.m0[i * p + j] - ep * f.z[k * p + i] * f.z[k * p + j]
        tm = paired_stat(f.c, f.m1, f.m2, d, f.floor, w)
        if not (isfinite(tp) and isfinite(tm)):
            f.bad = 1
            return
        f.t1[k] = (tp - tm) / (2 * ep)
        f.t2[k] = (tp - 2 * f.t0 + tm) / (ep * ep)
        ss += f.t1[k] * f.t1[k]
        s3 += f.t1[k] * f.t1[k] * f.t1[k]
        s2 += f.t2[k]
    f.sig = sqrt(ss) / n
    if not (f.sig > 0 and isfinite(f.sig)):
        f.bad = 1
        return
    f.a = s3 / (6.0 * n * n * n * f.sig * f.sig * f.sig)
    f.sum_delta = 0.0
    for i in range(p):
        f.g1[i] = 0.0
    for i in range(p * p):
        f.g2[i] = 0.0
    for k in range(n):
        dl = f.t1[k] / (n * n * f.sig)
        f.sum_delta += dl
        for i in range(p):
            f.g1[i] += dl * f.z[k * p + i]
            for j in range(p):
                f.g2[i * p + j] += dl * f.z[k * p + i] * f.z[k * p + j]
    tp = fit_along(f, ep, d, w)
    tm = fit_along(f, -ep, d, w)
    cq = (tp - 2 * f.t0 + tm) / (2 * f.sig * ep * ep)
    bhat = s2 / (2.0 * n * n)
    curv = bhat / f.sig - cq
    arg = 2 * ndtr(f.a) * ndtr(-curv)
    f.z0 = ndtri(arg)
    if not (isfinite(f.z0) and isfinite(f.a)):
        f.bad = 1


cdef double fit_bound(Fit* f, double level, const double* d, Work* w) noexcept nogil:
    cdef double z, den, za
    if f.bad:
        return NAN
    z = f.z0 + ndtri(level)
    den = 1.0 - f.a * z
    if fabs(den) < BCA_DENOM_TOL:
        return NAN
    za = z / (den * den)
    if not isfinite(za):
        return NAN
    return fit_along(f, za, d, w)


def abc_bounds(const double[:, ::1] x, const Py_ssize_t[:, ::1] idx,
               const double[::1] d, double eps, const double[::1] levels):
    cdef Py_ssize_t B = idx.shape[0]
    cdef int n = <int> idx.shape[1]
    cdef int p = <int> x.shape[1]
    cdef Py_ssize_t L = levels.shape[0]
    out_arr = np.empty((B, L))
    cdef double[:, ::1] out = out_arr
    cdef Fit f
    cdef Work w
    cdef Py_ssize_t b, k
    if fit_alloc(&f, n, p) != 0 or work_alloc(&w, p) != 0:
        raise MemoryError()
    with nogil:
        for b in range(B):
            fit_data(&f, x, idx, b, &d[0], eps, &w)
            for k in range(L):
                out[b, k] = fit_bound(&f, levels[k], &d[0], &w)
    fit_free(&f)
    work_free(&w)
    return out_arr


def abc_constants(const double[:, ::1] x, const Py_ssize_t[:, ::1] idx,
                  const double[::1] d, double eps):
    cdef Py_ssize_t B = idx.shape[0]
    cdef int n = <int> idx.shape[1]
    cdef int p = <int> x.shape[1]
    t0 = np.empty(B)
    sig = np.empty(B)
    acc = np.empty(B)
    z0 = np.empty(B)
    bad = np.empty(B, dtype=bool)
    cdef Fit f
    cdef Work w
    cdef Py_ssize_t b
    if fit_alloc(&f, n, p) != 0 or work_alloc(&w, p) != 0:
        raise MemoryError()
    for b in range(B):
        fit_data(&f, x, idx, b, &d[0], eps, &w)
        t0[b] = f.t0
        sig[b] = f.sig if not f.bad else NAN
        acc[b] = f.a if not f.bad else NAN
        z0[b] = f.z0 if not f.bad else NAN
        bad[b] = f.bad != 0
    fit_free(&f)
    work_free(&w)
    return t0, sig, acc, z0, bad


def abc_calibration_levels(const double[:, ::1] x, const Py_ssize_t[:, ::1] idx,
                           const double[::1] d, double eps, double target,
                           double lo, double hi, int iters):
    cdef Py_ssize_t B = idx.shape[0]
    cdef int n = <int> idx.shape[1]
    cdef int p = <int> x.shape[1]
    lam_arr = np.empty(B)
    cdef double[::1] lam = lam_arr
    cdef Fit f
    cdef Work w
    cdef Py_ssize_t b
    cdef int it
    cdef double a, c, mid, val
    if fit_alloc(&f, n, p) != 0 or work_alloc(&w, p) != 0:
        raise MemoryError()
    with nogil:
        for b in range(B):
            fit_data(&f, x, idx, b, &d[0], eps, &w)
            if f.bad:
                lam[b] = NAN
                continue
            a = lo
            c = hi
            for it in range(iters):
                mid = 0.5 * (a + c)
                val = fit_bound(&f, mid, &d[0], &w)
                # unevaluable tilt: beyond the crossing on its own side
                if (val < target) if isfinite(val) else (mid < 0.5):
                    a = mid
                else:
                    c = mid
            lam[b] = 0.5 * (a + c)
    fit_free(&f)
    work_free(&w)
    return lam_arr
