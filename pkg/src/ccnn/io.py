"""CSV artifacts: scenes, trajectories, kernel snapshots and training traces.

All files are comma separated with ``\\n`` line endings, a header row and
reals written with 17 significant digits so they round-trip exactly.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .kernel import KernelParams
from .signals import Scene, Signal, TimeGrid
from .training import TrainTrace


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n", newline="\n")


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [row for row in reader if row]


def _expect(header, wanted, path):
    if header != list(wanted):
        raise ValueError(f"{path}: expected header {','.join(wanted)}, got {','.join(header)}")


def write_scene(path, scene: Scene) -> None:
    t = scene.input.times()
    write_csv(path, ("t", "input", "target"), zip(t, scene.input.values, scene.target.values))


def read_scene(path) -> Scene:
    header, rows = read_csv(path)
    _expect(header, ("t", "input", "target"), path)
    data = np.array(rows, dtype=np.float64)
    t = data[:, 0]
    grid = TimeGrid(float(t[0]), float((t[-1] - t[0]) / (len(t) - 1)), len(t))
    return Scene(Signal(grid, data[:, 1]), Signal(grid, data[:, 2]))


def write_trajectory(path, y: Signal, u_T: Signal) -> None:
    write_csv(path, ("t", "y", "u_T"), zip(y.times(), y.values, u_T.values))


def write_kernel(path, params: KernelParams) -> None:
    taus = params.tau_grid().nodes()
    rows = ((b, tau, w) for b in range(params.t_blocks) for tau, w in zip(taus, params.weights[b]))
    write_csv(path, ("block", "tau", "weight"), rows)


def read_kernel(path, horizon: float) -> KernelParams:
    header, rows = read_csv(path)
    _expect(header, ("block", "tau", "weight"), path)
    blocks = np.array([int(r[0]) for r in rows])
    taus = np.array([float(r[1]) for r in rows])
    weights = np.array([float(r[2]) for r in rows])
    B = int(blocks.max()) + 1
    if len(rows) % B or not np.array_equal(np.sort(blocks), np.repeat(np.arange(B), len(rows) // B)):
        raise ValueError(f"{path}: every block needs the same number of tau nodes")
    M = len(rows) // B
    order = np.lexsort((taus, blocks))
    taus = taus[order].reshape(B, M)
    T_w = float(taus[0, -1])
    expected = np.linspace(0.0, T_w, M)
    if not np.allclose(taus, expected[None, :], rtol=1e-9, atol=1e-12 * T_w):
        raise ValueError(f"{path}: tau nodes must be uniform on [0, T_w] and shared by all blocks")
    return KernelParams(weights[order].reshape(B, M), T_w, horizon)


def write_trace(path, trace: TrainTrace) -> None:
    write_csv(path, ("epoch", "loss", "grad_norm"),
              ((r.epoch, r.loss, r.grad_norm) for r in trace.records))


def read_trace(path) -> np.ndarray:
    header, rows = read_csv(path)
    _expect(header, ("epoch", "loss", "grad_norm"), path)
    return np.array(rows, dtype=np.float64).reshape(-1, 3)
