"""Kernel fitting by gradient descent on the MSE between the ODE state and a target."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _backend
from .dynamics import DriveMode, Nonlinearity, SolverConfig, forward_record
from .kernel import KernelParams
from .signals import Scene, Signal


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, trace: "TrainTrace | None" = None):
        super().__init__(f"loss became non-finite at epoch {epoch}")
        self.epoch = epoch
        self.trace = trace


@dataclass(frozen=True)
class LossReport:
    mse: float
    per_sample: np.ndarray | None = None


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    learning_rate: float = 0.05
    optimizer: str = "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_mode: str = "unrolled_reverse"
    h: float = 1e-5
    seed: int = 0
    clip: float | None = None

    def __post_init__(self):
        if int(self.epochs) != self.epochs or self.epochs < 0:
            raise ValueError("epochs must be a non-negative integer")
        if not (math.isfinite(self.learning_rate) and self.learning_rate >= 0):
            raise ValueError("learning_rate must be finite and non-negative")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ValueError("adam needs 0 <= beta1, beta2 < 1 and eps > 0")
        if self.grad_mode not in ("unrolled_reverse", "finite_difference"):
            raise ValueError(f"unknown grad_mode {self.grad_mode!r}")
        if not self.h > 0:
            raise ValueError("finite-difference step h must be positive")
        if self.clip is not None and not self.clip > 0:
            raise ValueError("clip must be positive")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    grad_norm: float
    kernel_snapshot: str | None = None


@dataclass
class TrainTrace:
    initial_loss: float
    records: list[EpochRecord] = field(default_factory=list)
    snapshots: dict[int, KernelParams] = field(default_factory=dict)
    final_loss: float | None = None

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])


def loss_mse(y: Signal, target: Signal) -> LossReport:
    if y.grid != target.grid:
        raise ValueError("prediction and target live on different grids")
    sq = (y.values - target.values) ** 2
    return LossReport(float(np.mean(sq)), sq)


@dataclass(frozen=True)
class Model:
    """Solver settings shared by every loss and gradient evaluation."""

    cfg: SolverConfig
    f: Nonlinearity = Nonlinearity.TANH
    drive: DriveMode = DriveMode.BUFFER
    history: object = None
    y0: float | None = None
    backend: str | None = None

    def forward(self, params: KernelParams, scene: Scene):
        return forward_record(scene.input, params, self.cfg, self.f, self.drive, self.history,
                              self.y0, self.backend)


def scene_loss(params: KernelParams, scene: Scene, model: Model) -> float:
    rec = model.forward(params, scene)
    return float(np.mean((rec.y - scene.target.values) ** 2))


def grad_finite_difference(params: KernelParams, scene: Scene, model: Model,
                           h: float = 1e-5) -> tuple[LossReport, np.ndarray]:
    """Central differences, one weight at a time (2*B*M simulations)."""
    if not h > 0:
        raise ValueError("h must be positive")
    W = np.array(params.weights)
    grad = np.zeros_like(W)
    for idx in np.ndindex(W.shape):
        orig = W[idx]
        W[idx] = orig + h
        up = scene_loss(params.with_weights(W), scene, model)
        W[idx] = orig - h
        down = scene_loss(params.with_weights(W), scene, model)
        W[idx] = orig
        grad[idx] = (up - down) / (2 * h)
    return LossReport(scene_loss(params, scene, model)), grad


def grad_unrolled_reverse(params: KernelParams, scene: Scene,
                          model: Model) -> tuple[LossReport, np.ndarray]:
    """Exact gradient of the Euler-discretized loss by reverse accumulation."""
    if model.cfg.stepper != "euler":
        raise ValueError("reverse-mode gradients are only implemented for the euler stepper")
    rec = model.forward(params, scene)
    resid = rec.y - scene.target.values
    with np.errstate(over="ignore"):
        sq = resid ** 2
    n = resid.size
    gy = 2.0 * resid / n
    gk = np.zeros_like(rec.kv)
    si, sa, sb, _ = rec.stencils
    _backend.get(model.backend).reverse(
        rec.z, rec.base, rec.kv, rec.qw, np.ascontiguousarray(si[0]),
        np.ascontiguousarray(sa[0]), np.ascontiguousarray(sb[0]),
        np.ascontiguousarray(rec.blk[0]), rec.dt, rec.closed, rec.f.code, rec.u, gy, gk)
    return LossReport(float(np.mean(sq)), sq), gk @ rec.interp


def gradient(params: KernelParams, scene: Scene, model: Model,
             train_cfg: TrainConfig) -> tuple[LossReport, np.ndarray]:
    if train_cfg.grad_mode == "finite_difference":
        return grad_finite_difference(params, scene, model, train_cfg.h)
    return grad_unrolled_reverse(params, scene, model)


def _batch(params, scenes, model, train_cfg, pool):
    if pool is None:
        results = [gradient(params, s, model, train_cfg) for s in scenes]
    else:
        results = list(pool.map(lambda s: gradient(params, s, model, train_cfg), scenes))
    # Fixed left-to-right reduction keeps threaded and serial runs bit-identical.
    loss = 0.0
    grad = np.zeros_like(params.weights)
    for report, g in results:
        loss += report.mse
        grad = grad + g
    return loss / len(scenes), grad / len(scenes)


def train(params_init: KernelParams, scenes: Sequence[Scene], model: Model,
          train_cfg: TrainConfig, snapshot_every: int = 0,
          threads: int = 1) -> tuple[KernelParams, TrainTrace]:
    """Full-batch gradient descent over the scenes, one update per epoch."""
    if not scenes:
        raise ValueError("need at least one scene")
    params = params_init
    W = np.array(params.weights)
    m = np.zeros_like(W)
    v = np.zeros_like(W)
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    trace = None
    try:
        for epoch in range(1, train_cfg.epochs + 1):
            try:
                loss, g = _batch(params, scenes, model, train_cfg, pool)
            except FloatingPointError:
                raise TrainingDiverged(epoch, trace) from None
            if trace is None:
                trace = TrainTrace(initial_loss=loss)
            if not (math.isfinite(loss) and np.all(np.isfinite(g))):
                raise TrainingDiverged(epoch, trace)
            gnorm = float(np.linalg.norm(g))
            if train_cfg.clip is not None and gnorm > train_cfg.clip:
                g = g * (train_cfg.clip / gnorm)
            lr = train_cfg.learning_rate
            if train_cfg.optimizer == "sgd":
                W = W - lr * g
            else:
                b1, b2 = train_cfg.beta1, train_cfg.beta2
                m = b1 * m + (1 - b1) * g
                v = b2 * v + (1 - b2) * g * g
                m_hat = m / (1 - b1 ** epoch)
                v_hat = v / (1 - b2 ** epoch)
                W = W - lr * m_hat / (np.sqrt(v_hat) + train_cfg.eps)
            if not np.all(np.isfinite(W)):
                raise TrainingDiverged(epoch, trace)
            params = params.with_weights(W)
            ref = None
            if snapshot_every and epoch % snapshot_every == 0:
                ref = f"kernel_epoch_{epoch}.csv"
                trace.snapshots[epoch] = params
            trace.records.append(EpochRecord(epoch, loss, gnorm, ref))
        try:
            final = float(np.mean([scene_loss(params, s, model) for s in scenes]))
        except FloatingPointError:
            raise TrainingDiverged(train_cfg.epochs + 1, trace) from None
        if trace is None:
            trace = TrainTrace(initial_loss=final)
        trace.final_loss = final
        if not math.isfinite(final):
            raise TrainingDiverged(train_cfg.epochs + 1, trace)
    finally:
        if pool is not None:
            pool.shutdown()
    return params, trace
