# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled stepping kernels (hot inner loops of the Langevin and
parabolic integrators).  Same API and semantics as _core_py."""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt, pow, fabs

cnp.import_array()

BACKEND = "cython"

DEF _POT_QUADRATIC = 0

POT_QUADRATIC = 0
POT_DEGENERATE_RADIAL = 1


cdef inline double _radial_coef(double c, double r, double R0, double t) nogil:
    # c * r * (t - R0)_+^(r-1) / t, the scalar multiplying the slope in DV
    cdef double s = t - R0
    if s <= 0.0 or t <= 0.0:
        return 0.0
    if r == 3.0:
        return c * 3.0 * s * s / t
    if r == 4.0:
        return c * 4.0 * s * s * s / t
    return c * r * pow(s, r - 1.0) / t


def langevin_block(double[::1] phi, double[::1] p, double[:, ::1] noise,
                   double dt, double inv_scale, double bmax,
                   int pot_code, double c, double r, double R0,
                   bint project, Py_ssize_t[:, ::1] plus,
                   Py_ssize_t[:, ::1] minus):
    cdef Py_ssize_t nsteps = noise.shape[0]
    cdef Py_ssize_t n = phi.shape[0]
    cdef Py_ssize_t d = plus.shape[0]
    cdef Py_ssize_t k, x, i
    cdef double sqrt2 = sqrt(2.0)
    cdef double t, coef, b, acc, mean, xi
    flux_arr = np.empty((d, n), dtype=np.float64)
    cdef double[:, ::1] flux = flux_arr
    g_arr = np.empty((d, n), dtype=np.float64)
    cdef double[:, ::1] g = g_arr

    with nogil:
        for k in range(nsteps):
            for i in range(d):
                for x in range(n):
                    g[i, x] = (phi[plus[i, x]] - phi[x]) * inv_scale + p[i]
            if pot_code == _POT_QUADRATIC:
                for i in range(d):
                    for x in range(n):
                        flux[i, x] = c * g[i, x]
            else:
                for x in range(n):
                    t = 0.0
                    for i in range(d):
                        t += g[i, x] * g[i, x]
                    t = sqrt(t)
                    coef = _radial_coef(c, r, R0, t)
                    for i in range(d):
                        flux[i, x] = coef * g[i, x]
            mean = 0.0
            if project:
                for x in range(n):
                    mean += noise[k, x]
                mean /= n
            for x in range(n):
                acc = 0.0
                for i in range(d):
                    acc += flux[i, x] - flux[i, minus[i, x]]
                b = acc * inv_scale
                b /= 1.0 + (dt / bmax) * fabs(b)
                xi = noise[k, x] - mean
                phi[x] += dt * b + sqrt2 * xi
            if project:
                mean = 0.0
                for x in range(n):
                    mean += phi[x]
                mean /= n
                for x in range(n):
                    phi[x] -= mean
    return np.asarray(phi)


def parabolic_block(double[::1] u, double[:, :, ::1] a, double[::1] lam,
                    double dt, double inv_scale, Py_ssize_t nsteps,
                    forcing, Py_ssize_t[:, ::1] plus,
                    Py_ssize_t[:, ::1] minus):
    cdef Py_ssize_t n = u.shape[0]
    cdef Py_ssize_t d = plus.shape[0]
    cdef Py_ssize_t k, x, i, j
    cdef double acc, w
    cdef bint has_f = forcing is not None
    cdef double[::1] f
    if has_f:
        f = np.ascontiguousarray(forcing, dtype=np.float64)
    else:
        f = np.empty(0, dtype=np.float64)
    flux_arr = np.empty((d, n), dtype=np.float64)
    cdef double[:, ::1] flux = flux_arr
    g_arr = np.empty((d, n), dtype=np.float64)
    cdef double[:, ::1] g = g_arr

    with nogil:
        for k in range(nsteps):
            for i in range(d):
                for x in range(n):
                    g[i, x] = (u[plus[i, x]] - u[x]) * inv_scale + lam[i]
            for x in range(n):
                for i in range(d):
                    acc = 0.0
                    for j in range(d):
                        acc += a[x, i, j] * g[j, x]
                    flux[i, x] = acc
            for x in range(n):
                acc = 0.0
                for i in range(d):
                    acc += flux[i, x] - flux[i, minus[i, x]]
                w = acc * inv_scale
                if has_f:
                    w += f[x]
                u[x] += dt * w
    return np.asarray(u)
