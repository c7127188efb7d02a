"""Pure numpy implementation of the solver hot loops (fallback for ``_core``).

Shared layout for both backends:

``z``      delay line as a flat array; ``z[base + n]`` is the sample at step n
           (external input in buffer mode, ODE state in closed-loop mode) and
           ``z[:base]`` holds the history before t0.
``kv``     kernel values ``K(tau_j)`` per block, shape (B, J1).
``qw``     quadrature weights per lag (include dtau).
``si, sa, sb, sh``  lag stencils per RK stage offset c in (0, 1/2, 1): the lag-j
           value at time ``t_n + c*dt`` is
           ``sa*z[base+n-si] + sb*z[base+n-si-1] + sh*head``.
``blk``    kernel block per (stage, step).
Nonlinearity codes: 0 identity, 1 tanh, 2 relu.
"""

import numpy as np


def _f(kind, u):
    if kind == 0:
        return u
    if kind == 1:
        return np.tanh(u)
    return u if u > 0.0 else 0.0


def _fprime(kind, u):
    if kind == 0:
        return 1.0
    if kind == 1:
        th = np.tanh(u)
        return 1.0 - th * th
    return 1.0 if u > 0.0 else 0.0


def _drive(z, pos, kvb, qw, si, sa, sb, sh, head):
    idx = pos - si
    lag = sa * z[idx] + sh * head
    mask = sb != 0.0
    if mask.any():
        lag[mask] += sb[mask] * z[idx[mask] - 1]
    return float(np.dot(qw * kvb, lag))


def forward(z, base, kv, qw, si, sa, sb, sh, blk, dt, rk4, closed, fkind, y0, y_out, u_out):
    n_steps = y_out.shape[0]
    y = y0
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
            v = y + dt * k3 if closed else z[pos + 1]
            k4 = _f(fkind, _drive(z, pos, kv[blk[2, n]], qw, si[2], sa[2], sb[2], sh[2], v))
            y = y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if closed:
            z[pos + 1] = y


def reverse(z, base, kv, qw, si, sa, sb, blk, dt, closed, fkind, u, gy, gk):
    """Accumulate dL/dK into ``gk`` (B, J1) for an Euler forward pass; ``gy`` is dL/dy."""
    n_steps = u.shape[0]
    ybar = np.array(gy, dtype=np.float64)
    has_b = sb != 0.0
    for n in range(n_steps - 2, -1, -1):
        ub = ybar[n + 1] * dt * _fprime(fkind, u[n])
        ybar[n] += ybar[n + 1]
        if ub == 0.0:
            continue
        pos = base + n
        idx = pos - si
        lag = sa * z[idx]
        lag[has_b] += sb[has_b] * z[idx[has_b] - 1]
        b = blk[n]
        gk[b] += ub * qw * lag
        if closed:
            coef = ub * qw * kv[b]
            k = n - si
            ok = k >= 0
            np.add.at(ybar, k[ok], coef[ok] * sa[ok])
            ok = has_b & (k - 1 >= 0)
            np.add.at(ybar, k[ok] - 1, coef[ok] * sb[ok])
