"""Chirp scenes, white noise, detection targets and the matched-filter oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.ndimage import gaussian_filter1d


class AliasingError(ValueError):
    """Raised when a grid cannot represent a chirp's highest frequency."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t0 + i*dt`` for ``0 <= i < n``."""

    t0: float
    dt: float
    n: int

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"n must be an integer >= 2, got {self.n}")
        object.__setattr__(self, "n", int(self.n))

    def nodes(self) -> np.ndarray:
        return self.t0 + np.arange(self.n) * self.dt

    def node(self, i: int) -> float:
        return self.t0 + i * self.dt

    @property
    def t_end(self) -> float:
        return self.node(self.n - 1)

    @property
    def duration(self) -> float:
        return (self.n - 1) * self.dt

    @classmethod
    def span(cls, t0: float, t1: float, dt: float) -> "TimeGrid":
        """Grid from t0 to t1 (inclusive) with step dt; t1 - t0 must be a multiple of dt."""
        steps = (t1 - t0) / dt
        n = int(round(steps))
        if abs(steps - n) > 1e-9 * max(1.0, abs(steps)):
            raise ValueError(f"span {t1 - t0} is not a multiple of dt={dt}")
        return cls(t0, dt, n + 1)


@dataclass(frozen=True)
class Signal:
    grid: TimeGrid
    values: np.ndarray
    channels: int = 1

    def __post_init__(self):
        if self.channels != 1:
            raise ValueError("only single-channel signals are supported")
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if values.size != self.grid.n * self.channels:
            raise ValueError(f"expected {self.grid.n} samples, got {values.size}")
        if not np.all(np.isfinite(values)):
            raise ValueError("signal contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.grid.n

    def times(self) -> np.ndarray:
        return self.grid.nodes()


@dataclass(frozen=True)
class ChirpSpec:
    """Linear chirp: frequency sweeps from f_start to f_end over duration."""

    f_start: float
    f_end: float
    duration: float
    amplitude: float = 1.0
    onset: float = 0.0

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("chirp duration must be positive")
        if self.amplitude < 0:
            raise ValueError("chirp amplitude must be non-negative")
        if self.f_start < 0 or self.f_end < 0:
            raise ValueError("chirp frequencies must be non-negative")

    @property
    def end(self) -> float:
        return self.onset + self.duration

    def phase(self, t):
        s = np.asarray(t, dtype=np.float64) - self.onset
        return self.f_start * s + (self.f_end - self.f_start) * s * s / (2.0 * self.duration)

    def waveform(self, t) -> np.ndarray:
        """Chirp evaluated at arbitrary times (zero outside its support)."""
        t = np.asarray(t, dtype=np.float64)
        inside = (t >= self.onset) & (t <= self.onset + self.duration)
        return np.where(inside, self.amplitude * np.sin(2.0 * np.pi * self.phase(t)), 0.0)


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("noise sigma must be non-negative")
        if self.seed < 0:
            raise ValueError("noise seed must be unsigned")


@dataclass(frozen=True)
class Scene:
    """A detection problem: noisy input, training target and the chirps that made it."""

    input: Signal
    target: Signal
    chirps: tuple[ChirpSpec, ...] = field(default_factory=tuple)


def _check_sampling(spec: ChirpSpec, grid: TimeGrid) -> None:
    f_max = max(spec.f_start, spec.f_end)
    if f_max > 0 and grid.dt > 1.0 / (2.0 * f_max):
        raise AliasingError(
            f"dt={grid.dt} undersamples a {f_max} Hz chirp (needs dt <= {1.0 / (2.0 * f_max)})"
        )


def make_chirp(spec: ChirpSpec, grid: TimeGrid) -> Signal:
    _check_sampling(spec, grid)
    return Signal(grid, spec.waveform(grid.nodes()))


def noise_generator(seed: int) -> np.random.Generator:
    # Philox is counter-based, so a seed fixes the stream on every platform.
    return np.random.Generator(np.random.Philox(seed))


def add_noise(signal: Signal, noise: NoiseSpec) -> Signal:
    if noise.sigma == 0:
        return signal
    draws = noise_generator(noise.seed).standard_normal(signal.grid.n)
    return Signal(signal.grid, signal.values + noise.sigma * draws)


def presence_target(chirps: Sequence[ChirpSpec], grid: TimeGrid) -> Signal:
    t = grid.nodes()
    indicator = np.zeros(grid.n)
    for c in chirps:
        indicator[(t >= c.onset) & (t <= c.end)] = 1.0
    return Signal(grid, gaussian_filter1d(indicator, sigma=3.0, mode="constant"))


def compose_scene(chirps: Sequence[ChirpSpec], noise: NoiseSpec, grid: TimeGrid) -> Scene:
    """Sum the chirps, add noise, and build the smoothed presence target."""
    clean = np.zeros(grid.n)
    for c in chirps:
        clean = clean + make_chirp(c, grid).values
    noisy = add_noise(Signal(grid, clean), noise)
    return Scene(noisy, presence_target(chirps, grid), tuple(chirps))


def matched_filter_response(input: Signal, template: Signal, t_align: float) -> float:
    """Inner product of the input with the time-reversed template ending at ``t_align``.

    ``template`` lives in delay coordinates: sample i sits at lag ``tau_i``.
    Input samples between grid nodes are linearly interpolated.
    """
    taus = template.grid.nodes()
    when = t_align - taus
    tol = 1e-9 * max(1.0, abs(t_align))
    if when.min() < input.grid.t0 - tol or when.max() > input.grid.t_end + tol:
        raise ValueError(f"alignment {t_align} puts the template outside the input grid")
    seen = np.interp(when, input.times(), input.values)
    return float(np.dot(seen, template.values) * template.grid.dt)


def kernel_template(spec: ChirpSpec, tau_grid: TimeGrid) -> Signal:
    """Chirp seen backwards from its end, unit L2 norm (zeros if the chirp is silent)."""
    values = spec.waveform(spec.end - tau_grid.nodes())
    norm = np.linalg.norm(values)
    if norm > 0:
        values = values / norm
    return Signal(tau_grid, values)
