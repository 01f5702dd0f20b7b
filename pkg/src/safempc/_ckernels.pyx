# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot loops in ``_kernels_py``; same signatures and status codes."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, atan, floor, fmod

cnp.import_array()

DEF OK = 0
DEF BAD_VX = 1
DEF BAD_CURVATURE = 2


cdef inline double _pacejka(double D, double C, double B, double alpha) nogil:
    return 2.0 * D * sin(C * atan(B * alpha))


def pacejka(double D, double C, double B, double alpha):
    return _pacejka(D, C, B, alpha)


cdef int _euler(const double[::1] p, double* x, double a, double delta,
                double kappa, double dt) nogil:
    cdef double m = p[0], Iz = p[1], lf = p[2], lr = p[3]
    cdef double vx = x[0], vy = x[1], phi = x[2], e_phi = x[3], e_y = x[5]
    cdef double denom, alpha_f, alpha_r, fyf, fyr, cd, ce, se, s_dot
    if not vx > 0.0:
        return BAD_VX
    denom = 1.0 - kappa * e_y
    if denom == 0.0:
        return BAD_CURVATURE
    alpha_f = delta - atan((vy + lf * phi) / vx)
    alpha_r = -atan((vy - lf * phi) / vx)
    fyf = _pacejka(p[8], p[6], p[4], alpha_f)
    fyr = _pacejka(p[9], p[7], p[5], alpha_r)
    cd = cos(delta)
    ce = cos(e_phi)
    se = sin(e_phi)
    s_dot = (vx * ce - vy * se) / denom
    x[0] = vx + dt * (a - fyf * sin(delta) / m + phi * vy)
    x[1] = vy + dt * ((fyf * cd + fyr) / m - phi * vx)
    x[2] = phi + dt * (lf * fyf * cd - lr * fyr) / Iz
    x[3] = e_phi + dt * (phi - s_dot * kappa)
    x[4] = x[4] + dt * s_dot
    x[5] = e_y + dt * (vx * se + vy * ce)
    return OK


def vehicle_euler(p, x, double a, double delta, double kappa, double dt):
    cdef const double[::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef double buf[6]
    cdef int i, status
    for i in range(6):
        buf[i] = x[i]
    status = _euler(pv, buf, a, delta, kappa, dt)
    if status != OK:
        return tuple(float(v) for v in x), status
    return (buf[0], buf[1], buf[2], buf[3], buf[4], buf[5]), OK


cdef inline int _segment(const double[::1] ends, double length, double s) nogil:
    cdef double s_mod = fmod(s, length)
    cdef int lo = 0, hi = ends.shape[0] - 1, mid
    if s_mod < 0:
        s_mod += length
    while lo < hi:
        mid = (lo + hi) // 2
        if s_mod < ends[mid]:
            hi = mid
        else:
            lo = mid + 1
    return lo


def segment_index(seg_ends, double length, double s):
    cdef const double[::1] ends = np.ascontiguousarray(seg_ends, dtype=np.float64)
    return _segment(ends, length, s)


def vehicle_integrate(p, x, double a, double delta, seg_ends, seg_kappa,
                      double length, double dt, int nsteps):
    cdef const double[::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef const double[::1] ends = np.ascontiguousarray(seg_ends, dtype=np.float64)
    cdef const double[::1] kap = np.ascontiguousarray(seg_kappa, dtype=np.float64)
    traj_arr = np.empty((nsteps, 6), dtype=np.float64)
    cdef double[:, ::1] traj = traj_arr
    cdef double buf[6]
    cdef int i, j, status = OK
    for j in range(6):
        buf[j] = x[j]
    with nogil:
        for i in range(nsteps):
            status = _euler(pv, buf, a, delta, kap[_segment(ends, length, buf[4])], dt)
            if status != OK:
                break
            for j in range(6):
                traj[i, j] = buf[j]
    if status != OK:
        return traj_arr[:i], status, i
    return traj_arr, OK, nsteps


def mark_reachable(A, B, x0, useqs, x_lo, x_hi, dims, g_lo, g_hi, counts):
    cdef const double[:, ::1] Am = np.ascontiguousarray(A, dtype=np.float64)
    cdef const double[:, ::1] Bm = np.ascontiguousarray(B, dtype=np.float64)
    cdef const double[::1] x0v = np.ascontiguousarray(x0, dtype=np.float64)
    cdef const double[:, :, ::1] U = np.ascontiguousarray(useqs, dtype=np.float64)
    cdef const double[::1] lo = np.ascontiguousarray(x_lo, dtype=np.float64)
    cdef const double[::1] hi = np.ascontiguousarray(x_hi, dtype=np.float64)
    cdef int n = Am.shape[0], m = Bm.shape[1]
    cdef int n_seq = U.shape[0], k = U.shape[1]
    cdef int d0 = dims[0], d1 = dims[1]
    cdef int c0 = counts[0], c1 = counts[1]
    cdef double gl0 = g_lo[0], gl1 = g_lo[1], gh0 = g_hi[0], gh1 = g_hi[1]
    cdef double w0 = (gh0 - gl0) / c0, w1 = (gh1 - gl1) / c1
    grid_arr = np.zeros((c0, c1), dtype=np.uint8)
    cdef unsigned char[:, ::1] grid = grid_arr
    cdef double[::1] xa = np.empty(n), xb = np.empty(n)
    cdef int q, j, r, c, i0, i1
    cdef bint alive
    cdef double acc, v0, v1
    with nogil:
        for q in range(n_seq):
            for r in range(n):
                xa[r] = x0v[r]
            alive = True
            for j in range(k):
                for r in range(n):
                    acc = 0.0
                    for c in range(n):
                        acc = acc + Am[r, c] * xa[c]
                    for c in range(m):
                        acc = acc + Bm[r, c] * U[q, j, c]
                    xb[r] = acc
                for r in range(n):
                    xa[r] = xb[r]
                    if xa[r] < lo[r] or xa[r] > hi[r]:
                        alive = False
                if not alive:
                    break
            if not alive:
                continue
            v0 = xa[d0]
            v1 = xa[d1]
            i0 = c0 - 1 if v0 == gh0 else <int>floor((v0 - gl0) / w0)
            i1 = c1 - 1 if v1 == gh1 else <int>floor((v1 - gl1) / w1)
            if 0 <= i0 < c0 and 0 <= i1 < c1:
                grid[i0, i1] = 1
    return grid_arr
