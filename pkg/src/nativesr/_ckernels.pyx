# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the resampling kernels in ``_pykernels``.

Same signatures, same per-element accumulation order.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def banded_lastaxis(data, starts, weights):
    cdef const double[:, ::1] x = np.ascontiguousarray(data, dtype=np.float64)
    cdef const long long[::1] s = np.ascontiguousarray(starts, dtype=np.int64)
    cdef const double[:, ::1] wt = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t M = x.shape[0]
    cdef Py_ssize_t n_in = x.shape[1]
    cdef Py_ssize_t n_out = s.shape[0]
    cdef Py_ssize_t width = wt.shape[1]
    out = np.zeros((M, n_out), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t m, k, w, idx
    cdef double acc
    with nogil:
        for m in range(M):
            for k in range(n_out):
                acc = 0.0
                for w in range(width):
                    idx = s[k] + w
                    if idx > n_in - 1:
                        idx = n_in - 1
                    acc = acc + wt[k, w] * x[m, idx]
                o[m, k] = acc
    return out


def bspline_prefilter_lastaxis(data, double pole, Py_ssize_t tol_horizon):
    out = np.array(data, dtype=np.float64, order="C", copy=True)
    cdef double[:, ::1] c = out
    cdef Py_ssize_t M = c.shape[0]
    cdef Py_ssize_t n = c.shape[1]
    if n == 1:
        return out
    cdef double z = pole
    cdef double gain = (1.0 - z) * (1.0 - 1.0 / z)
    cdef double zk, zn, iz, z2n, init
    cdef Py_ssize_t m, k
    with nogil:
        for m in range(M):
            for k in range(n):
                c[m, k] = c[m, k] * gain
            if tol_horizon < n:
                zk = 1.0
                init = 0.0
                for k in range(tol_horizon):
                    init = init + zk * c[m, k]
                    zk = zk * z
            else:
                zn = z
                iz = 1.0 / z
                z2n = z ** (n - 1)
                init = c[m, 0] + z2n * c[m, n - 1]
                z2n = z2n * z2n * iz
                for k in range(1, n - 1):
                    init = init + (zn + z2n) * c[m, k]
                    zn = zn * z
                    z2n = z2n * iz
                init = init / (1.0 - zn * zn)
            c[m, 0] = init
            for k in range(1, n):
                c[m, k] = c[m, k] + z * c[m, k - 1]
            c[m, n - 1] = (z / (z * z - 1.0)) * (c[m, n - 1] + z * c[m, n - 2])
            for k in range(n - 2, -1, -1):
                c[m, k] = z * (c[m, k + 1] - c[m, k])
    return out


def laplacian7(data):
    cdef const double[:, :, ::1] x = np.ascontiguousarray(data, dtype=np.float64)
    cdef Py_ssize_t nx = x.shape[0]
    cdef Py_ssize_t ny = x.shape[1]
    cdef Py_ssize_t nz = x.shape[2]
    out = np.empty((nx, ny, nz), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t i, j, k
    cdef double acc
    with nogil:
        for i in range(nx):
            for j in range(ny):
                for k in range(nz):
                    acc = -6.0 * x[i, j, k]
                    acc = acc + x[i - 1 if i > 0 else 0, j, k]
                    acc = acc + x[i + 1 if i < nx - 1 else nx - 1, j, k]
                    acc = acc + x[i, j - 1 if j > 0 else 0, k]
                    acc = acc + x[i, j + 1 if j < ny - 1 else ny - 1, k]
                    acc = acc + x[i, j, k - 1 if k > 0 else 0]
                    acc = acc + x[i, j, k + 1 if k < nz - 1 else nz - 1]
                    o[i, j, k] = acc
    return out
