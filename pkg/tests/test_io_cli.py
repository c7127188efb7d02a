import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest
import tomli_w

from ccnn import io
from ccnn.cli import run
from ccnn.config import default_config, load_config, parse_config, write_config
from ccnn.kernel import KernelParams
from ccnn.signals import ChirpSpec, NoiseSpec, TimeGrid, compose_scene
from ccnn.training import EpochRecord, TrainTrace


def small_cfg(**over):
    cfg = {
        "scene": {"dt": 0.01, "n": 101, "chirps": [
            {"f_start": 3.0, "f_end": 6.0, "duration": 0.2, "onset": 0.2}],
            "noise": {"sigma": 0.1, "seed": 2}},
        "kernel": {"M": 5, "B": 2, "T_w": 0.1, "init": "small_random", "scale": 0.3},
        "train": {"epochs": 5, "learning_rate": 0.1, "snapshot_every": 2},
    }
    for section, values in over.items():
        if isinstance(values, dict):
            cfg.setdefault(section, {}).update(values)
        else:
            cfg[section] = values
    return cfg


def write(tmp_path, cfg, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(tomli_w.dumps(cfg))
    return str(path)


def cli(tmp_path, command, cfg, *extra, out="out"):
    return run([command, "--config", write(tmp_path, cfg), "--out", str(tmp_path / out), *extra])


# -- CSV round trips ---------------------------------------------------------------


def test_scene_round_trip(tmp_path):
    g = TimeGrid(0.0, 1e-3, 400)
    sc = compose_scene([ChirpSpec(5, 12, 0.2, onset=0.1)], NoiseSpec(0.3, 1), g)
    io.write_scene(tmp_path / "s.csv", sc)
    back = io.read_scene(tmp_path / "s.csv")
    assert back.input.values.tobytes() == sc.input.values.tobytes()
    assert back.target.values.tobytes() == sc.target.values.tobytes()
    assert back.input.grid.n == g.n
    assert (tmp_path / "s.csv").read_text().startswith("t,input,target\n")


def test_kernel_round_trip(tmp_path):
    p = KernelParams(np.random.default_rng(0).normal(size=(3, 7)), 0.2, 3.0)
    io.write_kernel(tmp_path / "k.csv", p)
    q = io.read_kernel(tmp_path / "k.csv", 3.0)
    assert q.weights.tobytes() == p.weights.tobytes()
    assert q.T_w == p.T_w
    assert (tmp_path / "k.csv").read_text().startswith("block,tau,weight\n")


def test_kernel_reader_rejects_ragged_blocks(tmp_path):
    io.write_csv(tmp_path / "k.csv", ("block", "tau", "weight"),
                 [(0, 0.0, 1.0), (0, 0.1, 1.0), (1, 0.0, 1.0)])
    with pytest.raises(ValueError):
        io.read_kernel(tmp_path / "k.csv", 1.0)


def test_trace_round_trip(tmp_path):
    tr = TrainTrace(1.0, [EpochRecord(1, 0.5, 0.25), EpochRecord(2, 1 / 3, 0.125)])
    io.write_trace(tmp_path / "t.csv", tr)
    data = io.read_trace(tmp_path / "t.csv")
    assert data[1, 1] == 1 / 3
    assert data.shape == (2, 3)


def test_config_round_trip(tmp_path):
    cfg = default_config()
    write_config(tmp_path / "c.toml", cfg)
    assert load_config(tmp_path / "c.toml") == cfg


# -- configuration errors ----------------------------------------------------------


def test_unknown_key_exits_2(tmp_path):
    assert cli(tmp_path, "generate", small_cfg(kernel={"colour": "red"})) == 2


def test_invalid_value_exits_2(tmp_path):
    assert cli(tmp_path, "generate", small_cfg(scene={"dt": -1.0})) == 2


def test_missing_file_exits_2(tmp_path):
    assert run(["generate", "--config", str(tmp_path / "nope.toml")]) == 2


def test_aliasing_exits_2(tmp_path):
    chirps = [{"f_start": 5.0, "f_end": 80.0, "duration": 0.2, "onset": 0.2}]
    assert cli(tmp_path, "generate", small_cfg(scene={"chirps": chirps})) == 2


def test_unwritable_output_exits_2(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert run(["generate", "--config", write(tmp_path, small_cfg()),
                "--out", str(blocker / "sub")]) == 2


def test_solver_dt_must_match_scene():
    with pytest.raises(ValueError):
        parse_config(tomli_w.dumps(small_cfg(solver={"dt": 0.02})))


# -- generate ----------------------------------------------------------------------


def test_generate_is_deterministic(tmp_path):
    cfg = small_cfg(scene={"n_scenes": 2})
    assert cli(tmp_path, "generate", cfg, out="a") == 0
    assert cli(tmp_path, "generate", cfg, out="b") == 0
    for name in ("scene_0.csv", "scene_1.csv", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["seeds"] == [2, 3]
    assert manifest["n_scenes"] == 2


def test_manifest_hash_tracks_semantics_only(tmp_path):
    base = parse_config(tomli_w.dumps(small_cfg()))
    moved = parse_config(tomli_w.dumps(small_cfg(output_dir="elsewhere")))
    other = parse_config(tomli_w.dumps(small_cfg(scene={"noise": {"sigma": 0.2, "seed": 2}})))
    assert base.config_hash() == moved.config_hash()
    assert base.config_hash() != other.config_hash()


# -- simulate ----------------------------------------------------------------------


def test_simulate_zero_kernel_gives_zero_trajectory(tmp_path):
    assert cli(tmp_path, "simulate", small_cfg(kernel={"init": "zeros"})) == 0
    header, rows = io.read_csv(tmp_path / "out" / "trajectory_0.csv")
    assert header == ["t", "y", "u_T"]
    assert all(float(r[1]) == 0.0 and float(r[2]) == 0.0 for r in rows)


def test_simulate_template_peaks_at_chirp_end(tmp_path):
    cfg = small_cfg(scene={"dt": 0.001, "n": 1001, "noise": {"sigma": 0.0, "seed": 0}},
                    kernel={"M": 41, "B": 1, "T_w": 0.2, "init": "template"})
    assert cli(tmp_path, "simulate", cfg) == 0
    header, rows = io.read_csv(tmp_path / "out" / "trajectory_0.csv")
    data = np.array(rows, dtype=float)
    assert abs(data[np.argmax(data[:, 2]), 0] - 0.4) <= 0.001


def test_simulate_closed_loop_exponential_from_kernel_file(tmp_path):
    dt = 0.001
    taus = np.linspace(0, 1.0, 1001)
    io.write_csv(tmp_path / "k.csv", ("block", "tau", "weight"),
                 [(0, tau, math.exp(tau)) for tau in taus])
    cfg = small_cfg(scene={"dt": dt, "n": 1001, "chirps": [], "noise": {"sigma": 0.0, "seed": 0}},
                    kernel={"M": 1001, "B": 1, "T_w": 1.0},
                    solver={"stepper": "rk4", "drive": "closed_loop", "nonlinearity": "identity",
                            "history": {"kind": "exponential", "value": 1.0, "rate": 1.0}})
    assert cli(tmp_path, "simulate", cfg, "--kernel", str(tmp_path / "k.csv")) == 0
    _, rows = io.read_csv(tmp_path / "out" / "trajectory_0.csv")
    y_end = float(rows[-1][1])
    assert abs(y_end - math.e) / math.e < 1e-4


def test_simulate_kernel_shape_mismatch_exits_3(tmp_path):
    io.write_kernel(tmp_path / "k.csv", KernelParams(np.zeros((2, 7)), 0.1, 1.0))
    assert cli(tmp_path, "simulate", small_cfg(), "--kernel", str(tmp_path / "k.csv")) == 3


# -- train -------------------------------------------------------------------------


def test_train_outputs(tmp_path):
    assert cli(tmp_path, "train", small_cfg()) == 0
    out = tmp_path / "out"
    trace = io.read_trace(out / "trace.csv")
    assert trace[:, 0].tolist() == [1, 2, 3, 4, 5]
    assert (out / "kernel_epoch_2.csv").exists() and (out / "kernel_epoch_4.csv").exists()
    assert (out / "kernel_final.csv").exists()
    report = json.loads((out / "report.json").read_text())
    assert report["diverged_epoch"] is None
    assert report["active_blocks"] == [0]
    assert report["kernel_similarity"][1] is None
    assert report["initial_loss"] == trace[0, 1]


def test_train_zero_epochs(tmp_path):
    assert cli(tmp_path, "train", small_cfg(train={"epochs": 0})) == 0
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["final_loss"] == report["initial_loss"]
    assert io.read_trace(tmp_path / "out" / "trace.csv").shape == (0, 3)


def test_train_zero_learning_rate_keeps_losses(tmp_path):
    assert cli(tmp_path, "train", small_cfg(train={"learning_rate": 0.0})) == 0
    losses = io.read_trace(tmp_path / "out" / "trace.csv")[:, 1]
    assert len(losses) == 5 and len(set(losses.tolist())) == 1


def test_train_divergence_exits_4(tmp_path):
    cfg = small_cfg(solver={"nonlinearity": "identity"},
                    train={"learning_rate": 1e15, "epochs": 50})
    assert cli(tmp_path, "train", cfg) == 4
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert isinstance(report["diverged_epoch"], int)


# -- gradcheck ---------------------------------------------------------------------


def test_gradcheck_passes(tmp_path):
    assert cli(tmp_path, "gradcheck", small_cfg()) == 0
    report = json.loads((tmp_path / "out" / "gradcheck.json").read_text())
    assert report["passed"] is True


def test_gradcheck_zero_problem(tmp_path):
    cfg = small_cfg(scene={"chirps": [], "noise": {"sigma": 0.0, "seed": 0}},
                    kernel={"init": "zeros"})
    assert cli(tmp_path, "gradcheck", cfg) == 0
    assert json.loads((tmp_path / "out" / "gradcheck.json").read_text())["max_abs_discrepancy"] == 0


def test_gradcheck_detects_corruption(tmp_path, monkeypatch):
    monkeypatch.setenv("CCNN_CORRUPT_REVERSE", "1")
    assert cli(tmp_path, "gradcheck", small_cfg()) == 5


def test_gradcheck_refuses_large_kernels(tmp_path):
    assert cli(tmp_path, "gradcheck", small_cfg(kernel={"M": 33, "B": 2})) == 2


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "ccnn.cli", "generate", "--config",
                           write(tmp_path, small_cfg()), "--out", str(tmp_path / "o")],
                          capture_output=True, text=True, env={**os.environ})
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "o" / "manifest.json").exists()
