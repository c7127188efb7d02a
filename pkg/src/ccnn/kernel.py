"""Trainable time-varying kernel K(tau, W, t): linear in tau, block-constant in t."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .signals import ChirpSpec, Signal, TimeGrid, kernel_template

# Relative slack for range checks on tau and t that come out of float arithmetic.
_RANGE_TOL = 1e-9


@dataclass(frozen=True)
class KernelParams:
    """Weights ``W[b, m]`` on ``M`` tau-nodes over ``[0, T_w]`` and ``B`` blocks over ``[0, horizon]``."""

    weights: np.ndarray
    T_w: float
    horizon: float

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[1] < 2 or w.shape[0] < 1:
            raise ValueError(f"weights must be B x M with M >= 2, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("kernel weights must be finite")
        if not self.T_w > 0:
            raise ValueError("T_w must be positive")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def t_blocks(self) -> int:
        return self.weights.shape[0]

    @property
    def tau_nodes(self) -> int:
        return self.weights.shape[1]

    @property
    def dtau(self) -> float:
        return self.T_w / (self.tau_nodes - 1)

    def tau_grid(self) -> TimeGrid:
        return TimeGrid(0.0, self.dtau, self.tau_nodes)

    def block_bounds(self, b: int) -> tuple[float, float]:
        width = self.horizon / self.t_blocks
        return b * width, (b + 1) * width

    def with_weights(self, weights) -> "KernelParams":
        return KernelParams(weights, self.T_w, self.horizon)


def block_index(params: KernelParams, t) -> np.ndarray | int:
    """Block of time ``t``; t == horizon falls into the last block."""
    t_arr = np.asarray(t, dtype=np.float64)
    tol = _RANGE_TOL * params.horizon
    if np.any(t_arr < -tol) or np.any(t_arr > params.horizon + tol):
        raise ValueError(f"t outside [0, {params.horizon}]")
    b = np.floor(np.clip(t_arr, 0.0, params.horizon) * params.t_blocks / params.horizon).astype(int)
    b = np.minimum(b, params.t_blocks - 1)
    return int(b) if b.ndim == 0 else b


def interpolation_matrix(params: KernelParams, taus) -> np.ndarray:
    """Matrix A with ``K(taus) = A @ W[b]``: two-point linear stencils on the tau nodes."""
    taus = np.atleast_1d(np.asarray(taus, dtype=np.float64))
    tol = _RANGE_TOL * params.T_w
    if np.any(taus < -tol) or np.any(taus > params.T_w + tol):
        raise ValueError(f"tau outside [0, {params.T_w}]")
    M = params.tau_nodes
    pos = np.clip(taus, 0.0, params.T_w) / params.dtau
    snapped = np.round(pos)
    pos = np.where(np.abs(pos - snapped) < 1e-9, snapped, pos)
    left = np.minimum(np.floor(pos).astype(int), M - 2)
    frac = pos - left
    A = np.zeros((taus.size, M))
    rows = np.arange(taus.size)
    A[rows, left] += 1.0 - frac
    A[rows, left + 1] += frac
    return A


def eval_kernel(params: KernelParams, tau: float, t: float) -> float:
    b = block_index(params, t)
    return float(interpolation_matrix(params, tau)[0] @ params.weights[b])


def kernel_values(params: KernelParams, taus) -> np.ndarray:
    """K at every block for the given lags, shape ``(B, len(taus))``."""
    return params.weights @ interpolation_matrix(params, taus).T


def init_kernel(M: int, B: int, T_w: float, horizon: float, scheme: str = "zeros",
                seed: int = 0, scale: float = 0.01) -> KernelParams:
    if M < 2 or B < 1:
        raise ValueError("need M >= 2 and B >= 1")
    if scheme == "zeros":
        w = np.zeros((B, M))
    elif scheme == "small_random":
        if scale < 0:
            raise ValueError("scale must be non-negative")
        w = np.random.default_rng(seed).uniform(-scale, scale, size=(B, M))
    else:
        raise ValueError(f"unknown init scheme {scheme!r}")
    return KernelParams(w, T_w, horizon)


def assign_blocks(chirps: Sequence[ChirpSpec], B: int, horizon: float) -> list[ChirpSpec | None]:
    """The chirp whose end falls in each block (first one wins), or None."""
    owner: list[ChirpSpec | None] = [None] * B
    for c in chirps:
        if c.amplitude == 0 or c.end < 0 or c.end > horizon * (1 + _RANGE_TOL):
            continue
        b = min(int(math.floor(min(c.end, horizon) * B / horizon)), B - 1)
        if owner[b] is None:
            owner[b] = c
    return owner


def template_kernel(chirps: Sequence[ChirpSpec], M: int, B: int, T_w: float,
                    horizon: float) -> KernelParams:
    """Per-block matched templates sampled on the tau nodes; blocks without a chirp are zero."""
    grid = TimeGrid(0.0, T_w / (M - 1), M)
    w = np.zeros((B, M))
    for b, c in enumerate(assign_blocks(chirps, B, horizon)):
        if c is not None:
            w[b] = kernel_template(c, grid).values
    return KernelParams(w, T_w, horizon)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def kernel_similarity(params: KernelParams, templates: Sequence[Signal]) -> list[float]:
    """Cosine similarity of each block's weights with its template."""
    if len(templates) != params.t_blocks:
        raise ValueError(f"need {params.t_blocks} templates, got {len(templates)}")
    grid = params.tau_grid()
    out = []
    for w, tmpl in zip(params.weights, templates):
        if tmpl.grid.n != grid.n or not math.isclose(tmpl.grid.dt, grid.dt, rel_tol=1e-9):
            raise ValueError("template is not sampled on the kernel's tau nodes")
        out.append(_cosine(w, tmpl.values))
    return out
