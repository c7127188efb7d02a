# cython: language_level=3
"""Compiled solver hot loops. Same layout and semantics as ``_core_py``."""

from libc.math cimport tanh

import numpy as np


cdef inline double _f(int kind, double u) noexcept nogil:
    if kind == 0:
        return u
    if kind == 1:
        return tanh(u)
    return u if u > 0.0 else 0.0


cdef inline double _fprime(int kind, double u) noexcept nogil:
    cdef double th
    if kind == 0:
        return 1.0
    if kind == 1:
        th = tanh(u)
        return 1.0 - th * th
    return 1.0 if u > 0.0 else 0.0


cdef inline double _drive(const double[::1] z, Py_ssize_t pos, const double[::1] kvb,
                          const double[::1] qw, const long[::1] si, const double[::1] sa,
                          const double[::1] sb, const double[::1] sh,
                          double head) noexcept nogil:
    cdef Py_ssize_t j, idx
    cdef double lag, acc = 0.0
    for j in range(qw.shape[0]):
        idx = pos - si[j]
        lag = sa[j] * z[idx] + sh[j] * head
        if sb[j] != 0.0:
            lag = lag + sb[j] * z[idx - 1]
        acc = acc + qw[j] * kvb[j] * lag
    return acc


def forward(double[::1] z, Py_ssize_t base, const double[:, ::1] kv, const double[::1] qw,
            const long[:, ::1] si, const double[:, ::1] sa, const double[:, ::1] sb,
            const double[:, ::1] sh, const long[:, ::1] blk, double dt, bint rk4, bint closed,
            int fkind, double y0, double[::1] y_out, double[::1] u_out):
    cdef Py_ssize_t n, pos, n_steps = y_out.shape[0]
    cdef double y = y0, u, k1, k2, k3, k4, v
    with nogil:
        for n in range(n_steps):
            pos = base + n
            y_out[n] = y
            u = _drive(z, pos, kv[blk[0, n]], qw, si[0], sa[0], sb[0], sh[0], 0.0)
            u_out[n] = u
            if n == n_steps - 1:
                break
            k1 = _f(fkind, u)
            if not rk4:
                y = y + dt * k1
            else:
                if closed:
                    v = y + 0.5 * dt * k1
                else:
                    v = 0.5 * (z[pos] + z[pos + 1])
                k2 = _f(fkind, _drive(z, pos, kv[blk[1, n]], qw, si[1], sa[1], sb[1], sh[1], v))
                if closed:
                    v = y + 0.5 * dt * k2
                k3 = _f(fkind, _drive(z, pos, kv[blk[1, n]], qw, si[1], sa[1], sb[1], sh[1], v))
                if closed:
                    v = y + dt * k3
                else:
                    v = z[pos + 1]
                k4 = _f(fkind, _drive(z, pos, kv[blk[2, n]], qw, si[2], sa[2], sb[2], sh[2], v))
                y = y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if closed:
                z[pos + 1] = y


def reverse(const double[::1] z, Py_ssize_t base, const double[:, ::1] kv, const double[::1] qw,
            const long[::1] si, const double[::1] sa, const double[::1] sb, const long[::1] blk,
            double dt, bint closed, int fkind, const double[::1] u, const double[::1] gy,
            double[:, ::1] gk):
    cdef Py_ssize_t n, j, k, pos, idx, b, n_steps = u.shape[0]
    cdef double ub, lag, coef
    cdef double[::1] ybar = np.array(gy, dtype=np.float64)
    with nogil:
        for n in range(n_steps - 2, -1, -1):
            ub = ybar[n + 1] * dt * _fprime(fkind, u[n])
            ybar[n] = ybar[n] + ybar[n + 1]
            if ub == 0.0:
                continue
            pos = base + n
            b = blk[n]
            for j in range(qw.shape[0]):
                idx = pos - si[j]
                lag = sa[j] * z[idx]
                if sb[j] != 0.0:
                    lag = lag + sb[j] * z[idx - 1]
                gk[b, j] = gk[b, j] + ub * qw[j] * lag
                if closed:
                    coef = ub * qw[j] * kv[b, j]
                    k = n - si[j]
                    if k >= 0:
                        ybar[k] = ybar[k] + coef * sa[j]
                    if sb[j] != 0.0 and k - 1 >= 0:
                        ybar[k - 1] = ybar[k - 1] + coef * sb[j]
