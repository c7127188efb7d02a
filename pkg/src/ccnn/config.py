"""Experiment configuration: a TOML file validated strictly (unknown keys are errors)."""

from __future__ import annotations

import hashlib
import json
import sys
from importlib import resources
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import tomli_w
from pydantic import BaseModel, ConfigDict, Field, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dynamics import DriveMode, Nonlinearity, SolverConfig
from .kernel import KernelParams, init_kernel, template_kernel
from .signals import ChirpSpec, NoiseSpec, Scene, TimeGrid, compose_scene
from .training import Model, TrainConfig


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ChirpCfg(_Strict):
    f_start: float = Field(ge=0)
    f_end: float = Field(ge=0)
    duration: float = Field(gt=0)
    amplitude: float = Field(1.0, ge=0)
    onset: float = 0.0


class NoiseCfg(_Strict):
    sigma: float = Field(0.0, ge=0)
    seed: int = Field(0, ge=0)


class SceneCfg(_Strict):
    t0: float = Field(0.0, ge=0)
    dt: float = Field(gt=0)
    n: int = Field(ge=2)
    n_scenes: int = Field(1, ge=1)
    chirps: list[ChirpCfg] = []
    noise: NoiseCfg = NoiseCfg()


class KernelCfg(_Strict):
    M: int = Field(ge=2)
    B: int = Field(ge=1)
    T_w: float = Field(gt=0)
    init: Literal["zeros", "small_random", "template"] = "small_random"
    seed: int = Field(0, ge=0)
    scale: float = Field(0.01, ge=0)


class HistoryCfg(_Strict):
    kind: Literal["zeros", "constant", "exponential"] = "zeros"
    value: float = 1.0
    rate: float = 1.0


class SolverCfg(_Strict):
    dt: Optional[float] = Field(None, gt=0)
    dtau: Optional[float] = Field(None, gt=0)
    stepper: Literal["euler", "rk4"] = "euler"
    drive: Literal["buffer", "closed_loop"] = "buffer"
    nonlinearity: Literal["identity", "tanh", "relu"] = "tanh"
    quadrature: Literal["trapezoid", "rectangle"] = "trapezoid"
    y0: Optional[float] = None
    history: HistoryCfg = HistoryCfg()


class TrainCfg(_Strict):
    epochs: int = Field(300, ge=0)
    learning_rate: float = Field(0.05, ge=0)
    optimizer: Literal["sgd", "adam"] = "sgd"
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    grad_mode: Literal["unrolled_reverse", "finite_difference"] = "unrolled_reverse"
    h: float = Field(1e-5, gt=0)
    seed: int = Field(0, ge=0)
    clip: Optional[float] = Field(None, gt=0)
    snapshot_every: int = Field(50, ge=0)


class GradcheckCfg(_Strict):
    rtol: float = Field(1e-4, gt=0)
    atol: float = Field(1e-7, gt=0)


class ExperimentConfig(_Strict):
    scene: SceneCfg
    kernel: KernelCfg
    solver: SolverCfg = SolverCfg()
    train: TrainCfg = TrainCfg()
    gradcheck: GradcheckCfg = GradcheckCfg()
    output_dir: str = "out"

    @model_validator(mode="after")
    def _consistent(self):
        if self.solver.dt is not None and abs(self.solver.dt - self.scene.dt) > 1e-12 * self.scene.dt:
            raise ValueError(f"solver.dt {self.solver.dt} differs from scene.dt {self.scene.dt}")
        if self.kernel.T_w > self.horizon:
            raise ValueError(f"kernel.T_w {self.kernel.T_w} exceeds the horizon {self.horizon}")
        return self

    # -- derived objects -------------------------------------------------------

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.scene.t0, self.scene.dt, self.scene.n)

    @property
    def horizon(self) -> float:
        return self.scene.t0 + (self.scene.n - 1) * self.scene.dt

    def chirps(self) -> list[ChirpSpec]:
        return [ChirpSpec(**c.model_dump()) for c in self.scene.chirps]

    def seeds(self) -> list[int]:
        return [self.scene.noise.seed + i for i in range(self.scene.n_scenes)]

    def scenes(self) -> list[Scene]:
        chirps = self.chirps()
        return [compose_scene(chirps, NoiseSpec(self.scene.noise.sigma, s), self.grid)
                for s in self.seeds()]

    def solver_config(self) -> SolverConfig:
        return SolverConfig(self.scene.dt, self.solver.dtau, self.solver.stepper,
                            "zeros" if self.solver.history.kind == "zeros" else "from_signal",
                            self.solver.quadrature)

    def history(self):
        h = self.solver.history
        if h.kind == "zeros":
            return None
        if h.kind == "constant":
            return lambda s: h.value + 0.0 * s
        return lambda s: h.value * np.exp(h.rate * s)

    def model(self, backend: str | None = None) -> Model:
        return Model(self.solver_config(), Nonlinearity(self.solver.nonlinearity),
                     DriveMode(self.solver.drive), self.history(), self.solver.y0, backend)

    def initial_kernel(self) -> KernelParams:
        k = self.kernel
        if k.init == "template":
            return template_kernel(self.chirps(), k.M, k.B, k.T_w, self.horizon)
        return init_kernel(k.M, k.B, k.T_w, self.horizon, k.init, k.seed, k.scale)

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(t.epochs, t.learning_rate, t.optimizer, t.beta1, t.beta2, t.eps,
                           t.grad_mode, t.h, t.seed, t.clip)

    def config_hash(self) -> str:
        """Hash of every semantic field (the output location is not semantic)."""
        payload = json.dumps(self.model_dump(exclude={"output_dir"}), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        return ExperimentConfig.model_validate(tomllib.load(fh))


def parse_config(text: str) -> ExperimentConfig:
    return ExperimentConfig.model_validate(tomllib.loads(text))


def default_config_text() -> str:
    return resources.files("ccnn").joinpath("default.toml").read_text()


def default_config() -> ExperimentConfig:
    return parse_config(default_config_text())


def write_config(path, cfg: ExperimentConfig) -> None:
    Path(path).write_bytes(tomli_w.dumps(cfg.model_dump(exclude_none=True)).encode())
