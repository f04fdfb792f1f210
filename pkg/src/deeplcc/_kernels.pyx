# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: OVM accelerations, platoon integration, data matrices.

Every function here has a numerically identical twin in ``_kernels_py``.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport cos, M_PI

cnp.import_array()


cdef inline double _desired_velocity(double s, double s_st, double s_go, double v_max) nogil:
    if s <= s_st:
        return 0.0
    if s >= s_go:
        return v_max
    return 0.5 * v_max * (1.0 - cos(M_PI * (s - s_st) / (s_go - s_st)))


cdef inline double _ovm(double s, double sdot, double v, double alpha, double beta,
                        double s_st, double s_go, double v_max) nogil:
    return alpha * (_desired_velocity(s, s_st, s_go, v_max) - v) + beta * sdot


def ovm_accel(double[::1] s, double[::1] sdot, double[::1] v,
              double alpha, double beta, double s_st, double s_go, double v_max):
    cdef Py_ssize_t i, n = s.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = _ovm(s[i], sdot[i], v[i], alpha, beta, s_st, s_go, v_max)
    return out


cdef void _step(double[::1] p, double[::1] v, double v_head_next,
                const unsigned char[::1] cav_mask, const double[::1] cav_u,
                const double[::1] noise, double alpha, double beta, double s_st,
                double s_go, double v_max, double dt,
                double[::1] p_next, double[::1] v_next, double[::1] acc) nogil:
    cdef Py_ssize_t i, n = cav_mask.shape[0]
    cdef double a
    for i in range(1, n + 1):
        if cav_mask[i - 1]:
            a = cav_u[i - 1]
        else:
            a = _ovm(p[i - 1] - p[i], v[i - 1] - v[i], v[i],
                     alpha, beta, s_st, s_go, v_max) + noise[i - 1]
        acc[i - 1] = a
    for i in range(n + 1):
        p_next[i] = p[i] + dt * v[i]
    v_next[0] = v_head_next
    for i in range(1, n + 1):
        v_next[i] = v[i] + dt * acc[i - 1]


def platoon_step(double[::1] p, double[::1] v, double v_head_next,
                 const unsigned char[::1] cav_mask, const double[::1] cav_u,
                 const double[::1] noise, double alpha, double beta, double s_st,
                 double s_go, double v_max, double dt):
    cdef Py_ssize_t n = cav_mask.shape[0]
    p_next = np.empty(n + 1, dtype=np.float64)
    v_next = np.empty(n + 1, dtype=np.float64)
    acc = np.empty(n, dtype=np.float64)
    _step(p, v, v_head_next, cav_mask, cav_u, noise, alpha, beta, s_st, s_go,
          v_max, dt, p_next, v_next, acc)
    return p_next, v_next, acc


def integrate_platoon(double[::1] p_init, double[::1] v_init, double[::1] v_head,
                      const unsigned char[::1] cav_mask, double[:, ::1] cav_accel,
                      double[:, ::1] noise, double alpha, double beta, double s_st,
                      double s_go, double v_max, double dt):
    cdef Py_ssize_t k, steps = cav_accel.shape[0], n = cav_mask.shape[0]
    P = np.empty((steps + 1, n + 1), dtype=np.float64)
    V = np.empty((steps + 1, n + 1), dtype=np.float64)
    A = np.empty((steps, n), dtype=np.float64)
    cdef double[:, ::1] Pv = P
    cdef double[:, ::1] Vv = V
    cdef double[:, ::1] Av = A
    Pv[0, :] = p_init
    Vv[0, :] = v_init
    with nogil:
        for k in range(steps):
            _step(Pv[k], Vv[k], v_head[k + 1], cav_mask, cav_accel[k], noise[k],
                  alpha, beta, s_st, s_go, v_max, dt, Pv[k + 1], Vv[k + 1], Av[k])
    return P, V, A


def hankel(double[:, ::1] w, Py_ssize_t depth):
    cdef Py_ssize_t T = w.shape[0], q = w.shape[1]
    cdef Py_ssize_t cols = T - depth + 1
    cdef Py_ssize_t i, j, c
    out = np.empty((q * depth, cols), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(depth):
            for c in range(q):
                for j in range(cols):
                    o[i * q + c, j] = w[i + j, c]
    return out


def page(double[:, ::1] w, Py_ssize_t depth):
    cdef Py_ssize_t T = w.shape[0], q = w.shape[1]
    cdef Py_ssize_t cols = T // depth
    cdef Py_ssize_t i, j, c
    out = np.empty((q * depth, cols), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(depth):
            for c in range(q):
                for j in range(cols):
                    o[i * q + c, j] = w[j * depth + i, c]
    return out
