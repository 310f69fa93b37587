# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; same contracts as ``lowenv._pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()

BACKEND = "cython"

cdef enum:
    MAXK = 16
    MAXV = 24


def upwind_advect(field, vx, vy, double h, dts):
    cdef double[:, ::1] f = np.array(field, dtype=np.float64, order="C")
    cdef double[:, ::1] g = np.empty_like(np.asarray(f))
    cdef const double[:, ::1] ux = np.ascontiguousarray(vx, dtype=np.float64)
    cdef const double[:, ::1] uy = np.ascontiguousarray(vy, dtype=np.float64)
    cdef const double[::1] steps = np.ascontiguousarray(dts, dtype=np.float64)
    cdef Py_ssize_t nx = f.shape[0], ny = f.shape[1]
    cdef Py_ssize_t i, j, s
    cdef double dt, dx, dy, a, b
    cdef double[:, ::1] tmp
    for s in range(steps.shape[0]):
        dt = steps[s]
        for i in range(nx):
            for j in range(ny):
                a = ux[i, j]
                if a > 0:
                    if i > 0:
                        dx = (f[i, j] - f[i - 1, j]) / h
                    else:
                        dx = (f[1, j] - f[0, j]) / h
                else:
                    if i < nx - 1:
                        dx = (f[i + 1, j] - f[i, j]) / h
                    else:
                        dx = (f[nx - 1, j] - f[nx - 2, j]) / h
                b = uy[i, j]
                if b > 0:
                    if j > 0:
                        dy = (f[i, j] - f[i, j - 1]) / h
                    else:
                        dy = (f[i, 1] - f[i, 0]) / h
                else:
                    if j < ny - 1:
                        dy = (f[i, j + 1] - f[i, j]) / h
                    else:
                        dy = (f[i, ny - 1] - f[i, ny - 2]) / h
                g[i, j] = f[i, j] - dt * (a * dx + b * dy)
        tmp = f
        f = g
        g = tmp
    return np.asarray(f)


cdef int _clip(double[:, ::1] px, double[:, ::1] pv, int m,
               double[:, ::1] qx, double[:, ::1] qv,
               int kappa, int k, int l, bint strict) noexcept nogil:
    cdef int i, ip, c, q = 0
    cdef double gc, gp, t
    cdef bint cin, pin
    for i in range(m):
        ip = i - 1 if i > 0 else m - 1
        gc = pv[i, k] - pv[i, l]
        gp = pv[ip, k] - pv[ip, l]
        if strict:
            cin = gc < 0
            pin = gp < 0
        else:
            cin = gc <= 0
            pin = gp <= 0
        if cin != pin:
            t = gp / (gp - gc)
            qx[q, 0] = px[ip, 0] + t * (px[i, 0] - px[ip, 0])
            qx[q, 1] = px[ip, 1] + t * (px[i, 1] - px[ip, 1])
            for c in range(kappa):
                qv[q, c] = pv[ip, c] + t * (pv[i, c] - pv[ip, c])
            q += 1
        if cin:
            qx[q, 0] = px[i, 0]
            qx[q, 1] = px[i, 1]
            for c in range(kappa):
                qv[q, c] = pv[i, c]
            q += 1
    return q


cdef double _area(double[:, ::1] p, int m) noexcept nogil:
    cdef double s = 0.0
    cdef int i, ip
    for i in range(m):
        ip = i - 1 if i > 0 else m - 1
        s += p[ip, 0] * p[i, 1] - p[i, 0] * p[ip, 1]
    return 0.5 * fabs(s)


def cut_fractions(vals, tri, coords):
    cdef const double[:, ::1] V = np.ascontiguousarray(vals, dtype=np.float64)
    cdef const cnp.int64_t[:, ::1] T = np.ascontiguousarray(tri, dtype=np.int64)
    cdef const double[:, ::1] X = np.ascontiguousarray(coords, dtype=np.float64)
    cdef int kappa = V.shape[0]
    if kappa > MAXK:
        raise ValueError(f"at most {MAXK} phases supported")
    cdef Py_ssize_t ne = T.shape[0]
    out_arr = np.zeros((ne, kappa))
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] ax = np.zeros((MAXV, 2))
    cdef double[:, ::1] av = np.zeros((MAXV, MAXK))
    cdef double[:, ::1] bx = np.zeros((MAXV, 2))
    cdef double[:, ::1] bv = np.zeros((MAXV, MAXK))
    cdef double[:, ::1] cx, cv, sx, sv
    cdef double[MAXK] fr
    cdef int lab[3]
    cdef Py_ssize_t e
    cdef int a, c, k, l, m, node, best
    cdef double total, ssum, vmin
    with nogil:
        for e in range(ne):
            for a in range(3):
                node = <int>T[e, a]
                best = 0
                vmin = V[0, node]
                for c in range(1, kappa):
                    if V[c, node] < vmin:
                        vmin = V[c, node]
                        best = c
                lab[a] = best
            if lab[0] == lab[1] and lab[1] == lab[2]:
                out[e, lab[0]] = 1.0
                continue
            for a in range(3):
                node = <int>T[e, a]
                ax[a, 0] = X[node, 0]
                ax[a, 1] = X[node, 1]
            total = _area(ax, 3)
            ssum = 0.0
            for k in range(kappa):
                for a in range(3):
                    node = <int>T[e, a]
                    ax[a, 0] = X[node, 0]
                    ax[a, 1] = X[node, 1]
                    for c in range(kappa):
                        av[a, c] = V[c, node]
                m = 3
                cx = ax
                cv = av
                sx = bx
                sv = bv
                for l in range(kappa):
                    if l == k:
                        continue
                    m = _clip(cx, cv, m, sx, sv, kappa, k, l, l < k)
                    cx, sx = sx, cx
                    cv, sv = sv, cv
                    if m < 3:
                        break
                fr[k] = _area(cx, m) / total if m >= 3 else 0.0
                ssum += fr[k]
            for k in range(kappa):
                out[e, k] = fr[k] / ssum
    return out_arr
