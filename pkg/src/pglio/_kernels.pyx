# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled versions of the hot loops; see ``_kernels_py`` for the contracts."""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, isfinite

cnp.import_array()


def admit_points(double[:, ::1] points, long long[::1] vid, double[:, :, ::1] slots,
                 long long[::1] counts, double min_dist2):
    cdef Py_ssize_t n = points.shape[0], cap = slots.shape[1]
    cdef Py_ssize_t i, j
    cdef long long v, c
    cdef double dx, dy, dz
    cdef bint ok
    admitted = np.zeros(n, dtype=np.bool_)
    cdef cnp.npy_bool[::1] out = admitted
    for i in range(n):
        v = vid[i]
        c = counts[v]
        if c >= cap:
            continue
        ok = True
        for j in range(c):
            dx = slots[v, j, 0] - points[i, 0]
            dy = slots[v, j, 1] - points[i, 1]
            dz = slots[v, j, 2] - points[i, 2]
            if dx * dx + dy * dy + dz * dz <= min_dist2:
                ok = False
                break
        if ok:
            slots[v, c, 0] = points[i, 0]
            slots[v, c, 1] = points[i, 1]
            slots[v, c, 2] = points[i, 2]
            counts[v] = c + 1
            out[i] = True
    return admitted


ROW_TOL = 1e-9


def bilinear_sample(img, mask, u, v):
    cdef double[:, ::1] im = np.ascontiguousarray(img, dtype=np.float64)
    cdef cnp.npy_bool[:, ::1] mk = np.ascontiguousarray(mask, dtype=np.bool_)
    uu = np.ascontiguousarray(u, dtype=np.float64).ravel()
    vv = np.ascontiguousarray(v, dtype=np.float64).ravel()
    cdef double[::1] us = uu, vs = vv
    cdef Py_ssize_t n = us.shape[0], H = im.shape[0], W = im.shape[1], k
    val = np.zeros(n)
    du = np.zeros(n)
    dv = np.zeros(n)
    ok = np.zeros(n, dtype=np.bool_)
    cdef double[::1] o_val = val, o_du = du, o_dv = dv
    cdef cnp.npy_bool[::1] o_ok = ok
    cdef double fu, fv, a, b, c, d, uf, vf
    cdef long long u0, u1, v0, v1
    for k in range(n):
        if not (isfinite(us[k]) and isfinite(vs[k])):
            continue
        if vs[k] < -ROW_TOL or vs[k] > H - 1 + ROW_TOL:
            continue
        vf = min(max(vs[k], 0.0), <double>(H - 1))
        uf = floor(us[k])
        v0 = min(<long long>floor(vf), H - 2)
        v1 = v0 + 1
        fu = us[k] - uf
        fv = vf - v0
        u0 = (<long long>uf) % W
        if u0 < 0:
            u0 += W
        u1 = (u0 + 1) % W
        o_ok[k] = mk[v0, u0] and mk[v0, u1] and mk[v1, u0] and mk[v1, u1]
        a = im[v0, u0]
        b = im[v0, u1]
        c = im[v1, u0]
        d = im[v1, u1]
        o_val[k] = (1 - fv) * ((1 - fu) * a + fu * b) + fv * ((1 - fu) * c + fu * d)
        o_du[k] = (1 - fv) * (b - a) + fv * (d - c)
        o_dv[k] = (1 - fu) * (c - a) + fu * (d - b)
    shape = np.shape(u)
    return val.reshape(shape), du.reshape(shape), dv.reshape(shape), ok.reshape(shape)
