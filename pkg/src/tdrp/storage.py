"""Checkpoint files and CSV readers/writers."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .numcore import MlpParams
from .ppo import Policy
from .representation import Encoder, TdrpConfig

CHECKPOINT_VERSION = 1


def _pack_mlp(prefix: str, params: MlpParams, out: dict) -> None:
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        out[f"{prefix}.w{i}"] = w
        out[f"{prefix}.b{i}"] = b


def _unpack_mlp(prefix: str, data, hidden: str, output: str, output_bias: bool = True) -> MlpParams:
    n = sum(1 for k in data.files if k.startswith(f"{prefix}.w"))
    return MlpParams([data[f"{prefix}.w{i}"] for i in range(n)],
                     [data[f"{prefix}.b{i}"] for i in range(n)], hidden, output, output_bias)


def save_checkpoint(path, policy: Policy, encoder: Encoder, config_text: str, iteration: int,
                    goal_states: Optional[np.ndarray] = None) -> Path:
    """Write every parameter plus the config text to one ``.npz`` file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays: dict = {}
    _pack_mlp("policy.mean", policy.mean_net, arrays)
    _pack_mlp("policy.value", policy.value_net, arrays)
    arrays["policy.log_std"] = policy.log_std
    _pack_mlp("encoder", encoder.params, arrays)
    if goal_states is not None and len(goal_states):
        arrays["goal_states"] = np.asarray(goal_states)
    meta = {
        "version": CHECKPOINT_VERSION,
        "iteration": int(iteration),
        "encoder_rounds": int(encoder.rounds),
        "tdrp": {k: (list(v) if isinstance(v, tuple) else v)
                 for k, v in encoder.config.__dict__.items()},
        "config": config_text,
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path):
    """Returns ``(policy, encoder, meta, goal_states)``."""
    path = Path(path)
    if path.is_dir():
        path = path / "checkpoint.npz"
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        mean = _unpack_mlp("policy.mean", data, "tanh", "tanh")
        value = _unpack_mlp("policy.value", data, "tanh", "identity")
        policy = Policy(mean, data["policy.log_std"].copy(), value)
        tcfg = meta["tdrp"]
        tcfg["hidden"] = tuple(tcfg["hidden"])
        enc = Encoder(_unpack_mlp("encoder", data, "tanh", "identity", False), TdrpConfig(**tcfg),
                      meta["encoder_rounds"], None)
        goals = data["goal_states"].copy() if "goal_states" in data.files else None
    return policy, enc, meta, goals


def write_csv(path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_demonstrations(path, trajectories: Sequence[np.ndarray]) -> None:
    """Demonstration file: ``trajectory_id, t, s_0 .. s_{d-1}``, one state per row."""
    d = np.asarray(trajectories[0]).shape[1]
    rows = []
    for k, traj in enumerate(trajectories):
        for t, s in enumerate(np.asarray(traj)):
            rows.append([k, t, *[float(x) for x in s]])
    write_csv(path, ["trajectory_id", "t"] + [f"s_{i}" for i in range(d)], rows)


def read_demonstrations(path) -> list[np.ndarray]:
    """Trajectories from a demonstration file.

    A file without ``trajectory_id``/``t`` columns is read as bare goal
    states, each returned as a length-1 trajectory.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    if header[:2] == ["trajectory_id", "t"]:
        trajs: dict[int, list] = {}
        for r in rows:
            trajs.setdefault(int(r[0]), []).append((int(r[1]), [float(x) for x in r[2:]]))
        return [np.array([s for _, s in sorted(v)]) for _, v in sorted(trajs.items())]
    return [np.array([[float(x) for x in r]]) for r in rows]
