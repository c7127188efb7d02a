"""Coupled solver: u(t, tau) integrated along tau, y(t) stepped along t.

For each time t the kernel-weighted delayed signal is integrated over lags
``[0, T_w]`` (``du/dtau = K(tau, t) * y(t - tau)`` with ``u(t, 0) = 0``), and
the full-window value ``u(t, T_w)`` drives ``dy/dt = f(u(t, T_w))``.
Delayed samples come from a delay line with linear interpolation between
stored samples.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import _backend
from .kernel import KernelParams, block_index, interpolation_matrix, kernel_values
from .signals import Signal, TimeGrid

_SNAP = 1e-9


class GridMismatch(ValueError):
    """Grids of the signal, solver and kernel do not line up."""


def _snap(x):
    r = np.round(x)
    return np.where(np.abs(x - r) < _SNAP * np.maximum(1.0, np.abs(r)), r, x)


def _window_steps(T_w: float, step: float) -> int:
    """Number of whole steps in T_w; raises if T_w is not a multiple of step."""
    ratio = T_w / step
    k = int(round(ratio))
    if k < 1 or abs(ratio - k) > _SNAP * max(1.0, ratio):
        raise GridMismatch(f"step {step} does not divide the delay window {T_w}")
    return k


class Nonlinearity(str, enum.Enum):
    IDENTITY = "identity"
    TANH = "tanh"
    RELU = "relu"

    @property
    def code(self) -> int:
        return {"identity": 0, "tanh": 1, "relu": 2}[self.value]

    def __call__(self, u):
        if self is Nonlinearity.IDENTITY:
            return u
        if self is Nonlinearity.TANH:
            return np.tanh(u)
        return np.maximum(u, 0.0)

    def derivative(self, u):
        if self is Nonlinearity.IDENTITY:
            return np.ones_like(u, dtype=np.float64)
        if self is Nonlinearity.TANH:
            return 1.0 - np.tanh(u) ** 2
        return (np.asarray(u) > 0).astype(np.float64)


class DriveMode(str, enum.Enum):
    BUFFER = "buffer"
    CLOSED_LOOP = "closed_loop"


@dataclass(frozen=True)
class SolverConfig:
    dt: float
    dtau: float | None = None
    stepper: str = "euler"
    history: str = "zeros"
    quadrature: str = "trapezoid"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.dtau is None:
            object.__setattr__(self, "dtau", self.dt)
        if not self.dtau > 0:
            raise ValueError("dtau must be positive")
        if self.stepper not in ("euler", "rk4"):
            raise ValueError(f"unknown stepper {self.stepper!r}")
        if self.history not in ("zeros", "from_signal"):
            raise ValueError(f"unknown history mode {self.history!r}")
        if self.quadrature not in ("trapezoid", "rectangle"):
            raise ValueError(f"unknown quadrature rule {self.quadrature!r}")

    def tau_grid(self, T_w: float) -> TimeGrid:
        return TimeGrid(0.0, self.dtau, _window_steps(T_w, self.dtau) + 1)


@dataclass(frozen=True)
class UProfile:
    tau_grid: TimeGrid
    values: np.ndarray

    @property
    def total(self) -> float:
        """u(t, T_w), the driving term of the ODE."""
        return float(self.values[-1])


class DelayBuffer:
    """Ring of the last ``capacity`` samples, spaced ``dt`` apart, newest at ``head_time``."""

    def __init__(self, T_w: float, dt: float, head_time: float = 0.0):
        if not (T_w > 0 and dt > 0):
            raise ValueError("T_w and dt must be positive")
        self.T_w = float(T_w)
        self.dt = float(dt)
        self.capacity = int(math.ceil(float(_snap(T_w / dt)))) + 1
        self.head_time = float(head_time)
        self._ring = np.zeros(self.capacity)
        self._head = 0

    @classmethod
    def from_history(cls, T_w: float, dt: float, head_time: float,
                     history: Callable[[np.ndarray], np.ndarray]) -> "DelayBuffer":
        buf = cls(T_w, dt, head_time)
        ages = np.arange(buf.capacity)
        buf._ring[(-ages) % buf.capacity] = np.asarray(history(head_time - ages * dt), dtype=np.float64)
        return buf

    def copy(self) -> "DelayBuffer":
        other = DelayBuffer.__new__(DelayBuffer)
        other.__dict__.update(self.__dict__)
        other._ring = self._ring.copy()
        return other

    def push(self, value: float) -> None:
        self._head = (self._head + 1) % self.capacity
        self._ring[self._head] = value
        self.head_time += self.dt

    def recent(self) -> np.ndarray:
        """Stored samples, newest first."""
        return self._ring[(self._head - np.arange(self.capacity)) % self.capacity]

    def lookup(self, tau):
        """Value at ``head_time - tau``; linear between stored samples, exact on them."""
        tau_arr = np.asarray(tau, dtype=np.float64)
        if np.any(tau_arr < -_SNAP * self.dt) or np.any(tau_arr > self.T_w * (1 + _SNAP)):
            raise ValueError(f"lag outside [0, {self.T_w}]")
        pos = _snap(np.clip(tau_arr, 0.0, (self.capacity - 1) * self.dt) / self.dt)
        left = np.minimum(np.floor(pos).astype(int), self.capacity - 1)
        frac = pos - left
        right = np.minimum(left + 1, self.capacity - 1)
        newest = self.recent()
        out = (1.0 - frac) * newest[left] + frac * newest[right]
        return float(out) if out.ndim == 0 else out


def buffer_push(buf: DelayBuffer, y_new: float) -> DelayBuffer:
    out = buf.copy()
    out.push(y_new)
    return out


def buffer_lookup(buf: DelayBuffer, tau):
    return buf.lookup(tau)


def quadrature_weights(n_nodes: int, dtau: float, rule: str = "trapezoid") -> np.ndarray:
    w = np.full(n_nodes, dtau)
    if rule == "trapezoid":
        w[0] = w[-1] = 0.5 * dtau
    elif rule == "rectangle":
        w[-1] = 0.0
    else:
        raise ValueError(f"unknown quadrature rule {rule!r}")
    return w


def _cumulative(g: np.ndarray, dtau: float, rule: str) -> np.ndarray:
    values = np.zeros_like(g)
    if rule == "trapezoid":
        values[1:] = np.cumsum(dtau * (g[:-1] + g[1:]) / 2.0)
    elif rule == "rectangle":
        values[1:] = np.cumsum(dtau * g[:-1])
    else:
        raise ValueError(f"unknown quadrature rule {rule!r}")
    return values


def _check_tau_grid(params: KernelParams, tau_grid: TimeGrid) -> None:
    if abs(tau_grid.t0) > _SNAP or not math.isclose(tau_grid.t_end, params.T_w, rel_tol=1e-9):
        raise GridMismatch(f"tau grid must span [0, {params.T_w}]")


def integrate_u(buf: DelayBuffer, params: KernelParams, t: float, tau_grid: TimeGrid,
                rule: str = "trapezoid") -> UProfile:
    """Cumulative quadrature of ``K(tau, t) * y(t - tau)`` over the tau grid."""
    _check_tau_grid(params, tau_grid)
    if not math.isclose(buf.T_w, params.T_w, rel_tol=1e-9):
        raise GridMismatch("delay buffer window differs from the kernel window")
    taus = tau_grid.nodes()
    g = kernel_values(params, taus)[block_index(params, t)] * buf.lookup(taus)
    return UProfile(tau_grid, _cumulative(g, tau_grid.dt, rule))


def ode_rhs(u_T: float, f: Nonlinearity) -> float:
    return float(Nonlinearity(f)(u_T))


def euler_step(rhs: Callable[[float, float], float], t: float, y: float, dt: float) -> float:
    return y + dt * rhs(t, y)


def rk4_step(rhs: Callable[[float, float], float], t: float, y: float, dt: float) -> float:
    k1 = rhs(t, y)
    k2 = rhs(t + dt / 2, y + dt / 2 * k1)
    k3 = rhs(t + dt / 2, y + dt / 2 * k2)
    k4 = rhs(t + dt, y + dt * k3)
    return y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _stage_u(buf, params, t, shift, head, tau_grid, rule):
    """u(t + shift, T_w) with the not-yet-stored segment interpolated towards ``head``."""
    taus = tau_grid.nodes()
    lags = np.empty_like(taus)
    older = taus >= shift - _SNAP * buf.dt
    lags[older] = buf.lookup(np.maximum(taus[older] - shift, 0.0))
    if shift > 0:
        w = (shift - taus[~older]) / shift
        lags[~older] = (1.0 - w) * buf.lookup(0.0) + w * head
    g = kernel_values(params, taus)[block_index(params, t + shift)] * lags
    return float(_cumulative(g, tau_grid.dt, rule)[-1])


def step(y: float, buf: DelayBuffer, params: KernelParams, t: float, cfg: SolverConfig,
         f: Nonlinearity, x_next: float | None = None,
         rhs: Callable[[float, float], float] | None = None) -> tuple[float, DelayBuffer]:
    """Advance one coupled step from ``t`` to ``t + dt``.

    ``buf`` holds the delayed signal up to time ``t``. With ``x_next`` the
    delay line carries an external input (buffer drive) and ``x_next`` is the
    sample at ``t + dt``; without it the new state is fed back (closed loop).
    ``rhs`` replaces the coupled right-hand side, for testing the steppers.
    """
    f = Nonlinearity(f)
    dt = cfg.dt
    stepper = rk4_step if cfg.stepper == "rk4" else euler_step
    if rhs is None:
        tau_grid = cfg.tau_grid(params.T_w)

        def rhs(ts, ys):
            shift = float(_snap((ts - t) / dt)) * dt
            if x_next is None:
                head = ys
            else:
                head = buf.lookup(0.0) + (shift / dt) * (x_next - buf.lookup(0.0))
            return float(f(_stage_u(buf, params, t, shift, head, tau_grid, cfg.quadrature)))

    y_next = stepper(rhs, t, y, dt)
    return y_next, buffer_push(buf, y_next if x_next is None else x_next)


# -- whole-trajectory simulation through the compiled/numpy core ------------------


@dataclass
class ForwardRecord:
    """Everything the reverse pass needs from a forward simulation."""

    grid: TimeGrid
    z: np.ndarray
    base: int
    kv: np.ndarray
    qw: np.ndarray
    stencils: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]
    blk: np.ndarray
    interp: np.ndarray
    y: np.ndarray
    u: np.ndarray
    closed: bool
    f: Nonlinearity
    dt: float


def lag_stencils(tau_nodes: np.ndarray, dt: float):
    """Integer offsets and weights of every lag at stage offsets 0, dt/2 and dt."""
    J1 = tau_nodes.size
    si = np.zeros((3, J1), dtype=np.int64)
    sa = np.zeros((3, J1))
    sb = np.zeros((3, J1))
    sh = np.zeros((3, J1))
    for row, c in enumerate((0.0, 0.5, 1.0)):
        q = _snap(tau_nodes / dt - c)
        stored = q >= 0
        left = np.floor(np.where(stored, q, 0.0)).astype(np.int64)
        frac = np.where(stored, q - left, 0.0)
        si[row] = left
        sa[row] = np.where(stored, 1.0 - frac, 0.0)
        sb[row] = frac
        if c > 0:
            w = np.where(stored, 0.0, -q / c)
            sa[row] += np.where(stored, 0.0, 1.0 - w)
            sh[row] = w
    return si, sa, sb, sh


def _history_values(history, times: np.ndarray) -> np.ndarray:
    if history is None:
        return np.zeros(times.size)
    if callable(history):
        return np.asarray(history(times), dtype=np.float64) * np.ones(times.size)
    vals = np.asarray(history, dtype=np.float64)
    if vals.size != times.size:
        raise GridMismatch(f"history needs {times.size} samples, got {vals.size}")
    return vals.copy()


def forward_record(input: Signal, params: KernelParams, cfg: SolverConfig,
                   f: Nonlinearity = Nonlinearity.TANH, drive: DriveMode = DriveMode.BUFFER,
                   history=None, y0: float | None = None, backend: str | None = None
                   ) -> ForwardRecord:
    f = Nonlinearity(f)
    drive = DriveMode(drive)
    grid = input.grid
    if not math.isclose(grid.dt, cfg.dt, rel_tol=1e-9):
        raise GridMismatch(f"input dt {grid.dt} differs from solver dt {cfg.dt}")
    tau_grid = cfg.tau_grid(params.T_w)
    taus = tau_grid.nodes()
    qw = quadrature_weights(tau_grid.n, tau_grid.dt, cfg.quadrature)
    A = interpolation_matrix(params, taus)
    interp_rows = params.weights @ A.T

    times = grid.nodes()
    try:
        blk0 = block_index(params, times)
        blk_half = block_index(params, np.append(times[:-1] + grid.dt / 2, times[-1]))
        blk_next = block_index(params, np.append(times[1:], times[-1]))
    except ValueError as exc:
        raise GridMismatch(f"simulation times fall outside the kernel horizon: {exc}") from None
    blk = np.ascontiguousarray(np.stack([blk0, blk_half, blk_next]).astype(np.int64))

    base = int(math.ceil(float(_snap(params.T_w / grid.dt))))
    closed = drive is DriveMode.CLOSED_LOOP
    z = np.zeros(base + grid.n)
    past = grid.t0 - grid.dt * np.arange(base, 0, -1)
    if closed:
        hist = _history_values(history, np.append(past, grid.t0))
        z[: base + 1] = hist
        start = hist[-1] if y0 is None else y0
        z[base] = start
    else:
        z[:base] = _history_values(history, past)
        z[base:] = input.values
        start = 0.0 if y0 is None else y0

    si, sa, sb, sh = lag_stencils(taus, grid.dt)
    y = np.empty(grid.n)
    u = np.empty(grid.n)
    core = _backend.get(backend)
    core.forward(z, base, np.ascontiguousarray(interp_rows), qw, si, sa, sb, sh, blk, grid.dt,
                 cfg.stepper == "rk4", closed, f.code, float(start), y, u)
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(u))):
        raise FloatingPointError("simulation produced non-finite values")
    return ForwardRecord(grid, z, base, interp_rows, qw, (si, sa, sb, sh), blk, A, y, u,
                         closed, f, grid.dt)


def simulate(input: Signal, params: KernelParams, cfg: SolverConfig,
             f: Nonlinearity = Nonlinearity.TANH, drive: DriveMode = DriveMode.BUFFER,
             history=None, y0: float | None = None,
             backend: str | None = None) -> tuple[Signal, Signal]:
    """Run the coupled system over the input grid; returns ``(y, u_T)``.

    ``drive="buffer"``: the input occupies the delay line and ``y`` is the
    detector output. ``drive="closed_loop"``: the delay line carries ``y``
    itself, seeded with ``history`` (callable of time, or samples oldest
    first ending at ``t0``); the input only supplies the time grid.
    """
    rec = forward_record(input, params, cfg, f, drive, history, y0, backend)
    return Signal(input.grid, rec.y), Signal(input.grid, rec.u)


def discrete_tdnn(y_init: Sequence[float], W_k: Sequence[float], f: Nonlinearity,
                  steps: int) -> np.ndarray:
    """Iterate ``y[t+1] = f(sum_tau W_k[tau] * y[t - tau])`` after the supplied history."""
    w = np.asarray(W_k, dtype=np.float64)
    y = [float(v) for v in y_init]
    if len(y) < w.size:
        raise ValueError(f"need at least {w.size} initial values, got {len(y)}")
    f = Nonlinearity(f)
    w = w.tolist()
    for _ in range(int(steps)):
        # left-to-right over tau so the result is reproducible bit for bit
        acc = 0.0
        for tau, wk in enumerate(w):
            acc += wk * y[-1 - tau]
        y.append(float(f(acc)))
    return np.array(y)
