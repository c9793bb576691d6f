"""Experiment configuration and the flat ``key = value`` file format.

Nested fields are addressed with a dotted prefix (``env.``, ``tdrp.``,
``ppo.``, ``reward.``); top-level fields are bare. Lists are comma
separated. Blank lines and ``#`` comments are ignored.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .envs import EnvSpec, default_spec
from .ppo import PpoConfig
from .representation import TdrpConfig
from .rewards import RewardSpec

SECTIONS = ("env", "tdrp", "ppo", "reward")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    env: EnvSpec = field(default_factory=EnvSpec)
    tdrp: TdrpConfig = field(default_factory=TdrpConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    reward: RewardSpec = field(default_factory=RewardSpec)
    iterations: int = 100
    seeds: tuple[int, ...] = (0,)
    out_dir: str = "runs/default"
    eval_episodes: int = 10
    demo_file: Optional[str] = None
    buffer_transitions: int = 50_000
    goal_capacity: int = 128
    encoder_warmup_steps: int = 0
    checkpoint_every: int = 50

    def validate(self) -> "ExperimentConfig":
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.eval_episodes < 1:
            raise ConfigError("eval_episodes must be >= 1")
        if self.buffer_transitions < 1 or self.goal_capacity < 1:
            raise ConfigError("buffer and goal-set capacities must be >= 1")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")
        if self.reward.mode == "skill_chain":
            raise ConfigError("skill_chain shaping is driven by the chain pipeline, not single-task training")
        return self


def preset(env_id: str) -> ExperimentConfig:
    """Defaults sized for each built-in environment.

    PPO keeps the published hyperparameters except where noted: smaller
    networks, a larger learning rate, and fewer encoder steps per iteration
    so that a few hundred iterations run in minutes on one core.
    """
    small_ppo = PpoConfig(hidden=(64, 64), lr=3e-4, rollout_steps=2048, minibatch=512,
                          init_log_std=-0.5, n_envs=16)
    if env_id == "chain":
        return ExperimentConfig(
            env=default_spec("chain"),
            tdrp=TdrpConfig(step=8, train_steps=50),
            ppo=small_ppo,
            reward=RewardSpec(mode="clustered_goals"),
            iterations=200,
        )
    if env_id == "umaze":
        return ExperimentConfig(
            env=default_spec("umaze", n_distractors=8),
            tdrp=TdrpConfig(step=6, train_steps=50, demo_fraction=0.8),
            # narrower exploration keeps raw-reward PPO from stumbling onto the goal
            ppo=replace(small_ppo, init_log_std=-0.75),
            reward=RewardSpec(mode="clustered_goals", lambda1=2.5),
            iterations=300,
            encoder_warmup_steps=3000,
        )
    if env_id == "chain2skill":
        return ExperimentConfig(
            env=default_spec("chain2skill", n_distractors=2),
            tdrp=TdrpConfig(step=8, train_steps=50),
            ppo=small_ppo,
            reward=RewardSpec(mode="none", n_clusters=20),
            iterations=60,
        )
    raise ConfigError(f"unknown env id {env_id!r}")


# -- key=value codec ---------------------------------------------------------

def _coerce(raw: str, current, key: str):
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            parts = [p for p in raw.replace(";", ",").split(",") if p.strip()]
            elem = type(current[0]) if current else int
            return tuple(elem(p.strip()) for p in parts)
        if isinstance(current, np.ndarray):
            return np.array([float(p) for p in raw.split(",") if p.strip()])
        if current is None:
            if raw.lower() in ("", "none"):
                return None
            if key == "reward.goal_state":
                return np.array([float(p) for p in raw.split(",") if p.strip()])
            return raw
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def _fields(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)}


def apply_overrides(cfg: ExperimentConfig, pairs: Iterable[tuple[str, str]]) -> ExperimentConfig:
    nested = {s: {} for s in SECTIONS}
    top = {}
    for key, raw in pairs:
        key = key.strip()
        if "." in key:
            section, name = key.split(".", 1)
            if section not in SECTIONS:
                raise ConfigError(f"unknown config section in {key!r}")
            obj = getattr(cfg, section)
            if name not in _fields(obj):
                raise ConfigError(f"unknown config key {key!r}")
            nested[section][name] = _coerce(raw, _fields(obj)[name], key)
        else:
            if key not in _fields(cfg) or key in SECTIONS:
                raise ConfigError(f"unknown config key {key!r}")
            top[key] = _coerce(raw, _fields(cfg)[key], key)
    try:
        for section, vals in nested.items():
            if vals:
                top[section] = replace(getattr(cfg, section), **vals)
        return replace(cfg, **top)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def parse_pairs(text: str) -> list[tuple[str, str]]:
    pairs = []
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        k, v = line.split("=", 1)
        pairs.append((k.strip(), v.strip()))
    return pairs


def load_config(path: Optional[str] = None, overrides: Iterable[str] = (),
                env_id: Optional[str] = None) -> ExperimentConfig:
    """Preset for the environment, then file values, then CLI ``key=value`` overrides."""
    pairs = parse_pairs(Path(path).read_text()) if path else []
    extra = []
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        extra.append((k.strip(), v.strip()))
    all_pairs = pairs + extra
    chosen = env_id
    for k, v in all_pairs:
        if k == "env.env_id":
            chosen = v
    cfg = preset(chosen or "umaze")
    return apply_overrides(cfg, all_pairs).validate()


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, np.ndarray):
        return ",".join(repr(float(x)) for x in v)
    if v is None:
        return "none"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for name, val in _fields(cfg).items():
        if name in SECTIONS:
            for sub, sv in _fields(val).items():
                lines.append(f"{name}.{sub} = {_fmt(sv)}")
        else:
            lines.append(f"{name} = {_fmt(val)}")
    return "\n".join(lines) + "\n"
