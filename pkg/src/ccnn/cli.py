"""Command-line front end.

    ccnn generate|simulate|train|gradcheck --config <path> [--out <dir>] [--kernel <file>] [--threads n]

Exit codes: 0 ok, 2 invalid config / unwritable output, 3 grid mismatch,
4 training diverged, 5 gradient check failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import pydantic

from . import _backend, io
from .config import ExperimentConfig, load_config
from .dynamics import GridMismatch, simulate
from .kernel import KernelParams, assign_blocks, kernel_similarity
from .signals import AliasingError, Signal, kernel_template
from .training import TrainingDiverged, grad_finite_difference, grad_unrolled_reverse, train

log = logging.getLogger("ccnn")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISMATCH = 3
EXIT_DIVERGED = 4
EXIT_GRADCHECK = 5


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _map(fn, items, threads):
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _scenes(cfg: ExperimentConfig):
    try:
        return cfg.scenes()
    except AliasingError as exc:
        raise CliError(f"aliasing: {exc}", EXIT_CONFIG) from None


def _kernel(cfg: ExperimentConfig, kernel_file: str | None) -> KernelParams:
    if kernel_file is None:
        return cfg.initial_kernel()
    try:
        params = io.read_kernel(kernel_file, cfg.horizon)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read kernel {kernel_file}: {exc}", EXIT_CONFIG) from None
    k = cfg.kernel
    if (params.t_blocks, params.tau_nodes) != (k.B, k.M) or not math.isclose(
            params.T_w, k.T_w, rel_tol=1e-9):
        raise CliError(
            f"kernel file has B={params.t_blocks}, M={params.tau_nodes}, T_w={params.T_w}; "
            f"config expects B={k.B}, M={k.M}, T_w={k.T_w}", EXIT_MISMATCH)
    return params


def block_templates(cfg: ExperimentConfig) -> list[Signal | None]:
    """Matched template for each block that contains a chirp end, else None."""
    k = cfg.kernel
    grid = KernelParams(np.zeros((k.B, k.M)), k.T_w, cfg.horizon).tau_grid()
    return [None if c is None else kernel_template(c, grid)
            for c in assign_blocks(cfg.chirps(), k.B, cfg.horizon)]


def similarity_report(params: KernelParams, cfg: ExperimentConfig) -> list[float | None]:
    templates = block_templates(cfg)
    zero = Signal(params.tau_grid(), np.zeros(params.tau_nodes))
    sims = kernel_similarity(params, [zero if t is None else t for t in templates])
    return [None if t is None else s for s, t in zip(sims, templates)]


def cmd_generate(cfg: ExperimentConfig, out: Path, threads: int = 1) -> int:
    scenes = _scenes(cfg)
    for i, scene in enumerate(scenes):
        io.write_scene(out / f"scene_{i}.csv", scene)
    _write_json(out / "manifest.json", {
        "config_hash": cfg.config_hash(),
        "seeds": cfg.seeds(),
        "n_scenes": len(scenes),
    })
    return EXIT_OK


def cmd_simulate(cfg: ExperimentConfig, out: Path, kernel_file: str | None = None,
                 threads: int = 1) -> int:
    scenes = _scenes(cfg)
    params = _kernel(cfg, kernel_file)
    model = cfg.model()

    def run(scene):
        return simulate(scene.input, params, model.cfg, model.f, model.drive, model.history,
                        model.y0)

    for i, (y, u) in enumerate(_map(run, scenes, threads)):
        io.write_trajectory(out / f"trajectory_{i}.csv", y, u)
    return EXIT_OK


def cmd_train(cfg: ExperimentConfig, out: Path, kernel_file: str | None = None,
              threads: int = 1) -> int:
    scenes = _scenes(cfg)
    params = _kernel(cfg, kernel_file)
    started = time.perf_counter()
    report: dict = {"epochs": cfg.train.epochs, "diverged_epoch": None}
    code = EXIT_OK
    try:
        final, trace = train(params, scenes, cfg.model(), cfg.train_config(),
                             snapshot_every=cfg.train.snapshot_every, threads=threads)
    except TrainingDiverged as exc:
        trace, final, code = exc.trace, None, EXIT_DIVERGED
        report["diverged_epoch"] = exc.epoch
        log.error("%s", exc)
    if trace is not None:
        io.write_trace(out / "trace.csv", trace)
        for epoch, snap in sorted(trace.snapshots.items()):
            io.write_kernel(out / f"kernel_epoch_{epoch}.csv", snap)
        report["initial_loss"] = trace.initial_loss
        report["final_loss"] = trace.final_loss
    else:
        io.write_csv(out / "trace.csv", ("epoch", "loss", "grad_norm"), [])
    if final is not None:
        io.write_kernel(out / "kernel_final.csv", final)
        sims = similarity_report(final, cfg)
        report["kernel_similarity"] = sims
        report["active_blocks"] = [b for b, s in enumerate(sims) if s is not None]
    report["wall_clock_seconds"] = time.perf_counter() - started
    _write_json(out / "report.json", report)
    return code


def cmd_gradcheck(cfg: ExperimentConfig, out: Path, kernel_file: str | None = None,
                  threads: int = 1) -> int:
    k = cfg.kernel
    if k.M * k.B > 64:
        raise CliError(f"gradcheck needs M*B <= 64, got {k.M * k.B}", EXIT_CONFIG)
    if cfg.solver.stepper != "euler":
        raise CliError("gradcheck needs the euler stepper", EXIT_CONFIG)
    scene = _scenes(cfg)[0]
    params = _kernel(cfg, kernel_file)
    model = cfg.model()
    _, reverse = grad_unrolled_reverse(params, scene, model)
    if os.environ.get("CCNN_CORRUPT_REVERSE") == "1":
        reverse = reverse * 1.01 + 1e-3
    loss, fd = grad_finite_difference(params, scene, model, cfg.train.h)
    err = np.abs(reverse - fd)
    rtol, atol = cfg.gradcheck.rtol, cfg.gradcheck.atol
    passed = bool(np.all(err <= np.maximum(rtol * np.abs(fd), atol)))
    rel = err / np.maximum(np.abs(fd), np.finfo(float).tiny)
    rel[err == 0] = 0.0
    _write_json(out / "gradcheck.json", {
        "loss": loss.mse,
        "max_abs_discrepancy": float(err.max()),
        "max_rel_discrepancy": float(rel.max()),
        "rtol": rtol,
        "atol": atol,
        "passed": passed,
    })
    return EXIT_OK if passed else EXIT_GRADCHECK


COMMANDS = {
    "generate": cmd_generate,
    "simulate": cmd_simulate,
    "train": cmd_train,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ccnn", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="experiment TOML file")
    parser.add_argument("--out", help="output directory (overrides output_dir)")
    parser.add_argument("--kernel", help="kernel CSV (block,tau,weight) instead of config init")
    parser.add_argument("--threads", type=int, default=1, help="scene-level worker threads")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        try:
            cfg = load_config(args.config)
        except (OSError, ValueError, pydantic.ValidationError) as exc:
            raise CliError(f"invalid config {args.config}: {exc}", EXIT_CONFIG) from None
        if args.threads < 1:
            raise CliError("--threads must be >= 1", EXIT_CONFIG)
        out = Path(args.out or cfg.output_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
            probe = out / ".write_probe"
            probe.write_text("")
            probe.unlink()
        except OSError as exc:
            raise CliError(f"output directory {out} is not writable: {exc}", EXIT_CONFIG) from None
        log.info("backend: %s", _backend.NAME)
        fn = COMMANDS[args.command]
        if args.command == "generate":
            return fn(cfg, out, threads=args.threads)
        return fn(cfg, out, kernel_file=args.kernel, threads=args.threads)
    except CliError as exc:
        print(f"ccnn: {exc}", file=sys.stderr)
        return exc.code
    except GridMismatch as exc:
        print(f"ccnn: grid mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except AliasingError as exc:
        print(f"ccnn: aliasing: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
