# cython: language_level=3
"""Compiled versions of the kernels in ``_fallback.py``.

Same signatures and return values. ``nu_fixed_point`` uses a complex
Cholesky factorisation and hands back ``NEEDS_PINV`` when the weighting is too
close to singular, so the caller can finish on the pseudo-inverse path.
"""

import numpy as np

from libc.math cimport sqrt, fabs

cdef int CONVERGED = 0
cdef int MAX_ITER = 1
cdef int NEEDS_PINV = 2


cdef inline double abs2(double complex z) nogil:
    return z.real * z.real + z.imag * z.imag


def antenna_powers(const double complex[:, ::1] directions, const double[::1] powers):
    cdef Py_ssize_t n = directions.shape[0], k = directions.shape[1], i, j
    out = np.zeros(n)
    cdef double[::1] o = out
    cdef double acc
    with nogil:
        for i in range(n):
            acc = 0.0
            for j in range(k):
                acc += powers[j] * abs2(directions[i, j])
            o[i] = acc
    return out


def project_duals(const double[::1] q_raw, const double[::1] p):
    cdef Py_ssize_t n = q_raw.shape[0], i
    cdef double target = 0.0, s = 0.0, num, den, best, ratio
    cdef int sweep = 0, changed, any_active, first = 1
    cdef Py_ssize_t best_i
    active_arr = np.zeros(n, dtype=np.int8)
    new_arr = np.zeros(n, dtype=np.int8)
    cdef signed char[::1] active = active_arr
    cdef signed char[::1] new_active = new_arr
    out = np.empty(n)
    cdef double[::1] q = out
    with nogil:
        for i in range(n):
            target += p[i]
        for sweep in range(1, 2 * n + 3):
            any_active = 0
            for i in range(n):
                new_active[i] = (q_raw[i] - p[i] * s) > 0
                any_active |= new_active[i]
            if not any_active:
                best = q_raw[0] / p[0]
                best_i = 0
                for i in range(1, n):
                    ratio = q_raw[i] / p[i]
                    if ratio > best:
                        best = ratio
                        best_i = i
                new_active[best_i] = 1
            if not first:
                changed = 0
                for i in range(n):
                    if new_active[i] != active[i]:
                        changed = 1
                        break
                if not changed:
                    break
            first = 0
            num = -target
            den = 0.0
            for i in range(n):
                active[i] = new_active[i]
                if active[i]:
                    num += p[i] * q_raw[i]
                    den += p[i] * p[i]
            s = num / den
        for i in range(n):
            q[i] = q_raw[i] - p[i] * s
            if q[i] < 0.0:
                q[i] = 0.0
    return out, sweep


def nu_fixed_point(const double[::1] base, const double complex[:, ::1] channels,
                   const double[::1] gamma, double[::1] nu0, double tol, int max_iter,
                   int damped_iters, double damping, double rtol=1e-10):
    cdef Py_ssize_t n = channels.shape[0], k = channels.shape[1]
    cdef Py_ssize_t i, j, m, u
    cdef int it = 0, status = MAX_ITER
    cdef double base_min = base[0], base_max = base[0], bound, d, quad, change, rel, val
    cdef double complex acc
    nu_arr = np.array(nu0, dtype=np.float64)
    cdef double[::1] nu = nu_arr
    cdef double[::1] new = np.empty(k)
    cdef double[::1] norms2 = np.zeros(k)
    cdef double complex[:, ::1] a = np.empty((n, n), dtype=np.complex128)
    cdef double complex[::1] y = np.empty(n, dtype=np.complex128)

    with nogil:
        for i in range(1, n):
            if base[i] < base_min:
                base_min = base[i]
            if base[i] > base_max:
                base_max = base[i]
        for u in range(k):
            for i in range(n):
                norms2[u] += abs2(channels[i, u])

        for it in range(1, max_iter + 1):
            bound = base_max
            for u in range(k):
                bound += nu[u] * norms2[u]
            if not base_min > rtol * bound:
                status = NEEDS_PINV
                it -= 1
                break
            # lower triangle of diag(base) + sum_u nu_u h_u h_u^H
            for i in range(n):
                for j in range(i + 1):
                    acc = 0.0
                    for u in range(k):
                        acc = acc + nu[u] * channels[i, u] * channels[j, u].conjugate()
                    a[i, j] = acc
                a[i, i] = a[i, i] + base[i]
            # in-place Cholesky, a = L L^H
            for j in range(n):
                d = a[j, j].real
                for m in range(j):
                    d -= abs2(a[j, m])
                if d <= 0.0:
                    status = NEEDS_PINV
                    break
                d = sqrt(d)
                a[j, j] = d
                for i in range(j + 1, n):
                    acc = a[i, j]
                    for m in range(j):
                        acc = acc - a[i, m] * a[j, m].conjugate()
                    a[i, j] = acc / d
            if status == NEEDS_PINV:
                it -= 1
                break
            # h^H A^{-1} h = ||L^{-1} h||^2
            change = 0.0
            for u in range(k):
                quad = 0.0
                for i in range(n):
                    acc = channels[i, u]
                    for m in range(i):
                        acc = acc - a[i, m] * y[m]
                    y[i] = acc / a[i, i].real
                    quad += abs2(y[i])
                if quad < 1e-300:
                    quad = 1e-300
                val = 1.0 / (quad * (1.0 + 1.0 / gamma[u]))
                if it <= damped_iters:
                    val = damping * nu[u] + (1.0 - damping) * val
                new[u] = val
                rel = fabs(val - nu[u]) / (nu[u] if nu[u] > 1e-300 else 1e-300)
                if rel > change:
                    change = rel
            for u in range(k):
                nu[u] = new[u]
            if change < tol:
                status = CONVERGED
                break
    if status == MAX_ITER:
        it = max_iter
    return nu_arr, it, status


def one_shot_mrt(const double complex[:, ::1] normalized, const double[::1] nu, const double[::1] p):
    cdef Py_ssize_t n = normalized.shape[0], k = normalized.shape[1], i, u
    cdef double t = 0.0, scale
    cdef double complex proj, di
    g_arr = np.zeros(n)
    q_arr = np.empty(n)
    z_arr = np.empty(n)
    w_arr = np.empty((n, k), dtype=np.complex128)
    cdef double[::1] g = g_arr
    cdef double[::1] q = q_arr
    cdef double[::1] z = z_arr
    cdef double complex[:, ::1] w = w_arr
    with nogil:
        for i in range(n):
            for u in range(k):
                g[i] += nu[u] * nu[u] * abs2(normalized[i, u])
            t += sqrt(g[i])
        for i in range(n):
            q[i] = t * sqrt(g[i])
            z[i] = 0.0
        for u in range(k):
            proj = 0.0
            for i in range(n):
                di = normalized[i, u] / q[i]
                w[i, u] = di
                proj = proj + normalized[i, u].conjugate() * di
            # beta_k = t / |h^H u|^2 with u = d/||d||, so w = d * sqrt(t) / |h^H d|
            scale = sqrt(t / abs2(proj))
            for i in range(n):
                w[i, u] = w[i, u] * scale
                z[i] += abs2(w[i, u])
        for i in range(n):
            z[i] = sqrt(p[i] / z[i])
            for u in range(k):
                w[i, u] = w[i, u] * z[i]
    return w_arr, g_arr, q_arr, t, z_arr
