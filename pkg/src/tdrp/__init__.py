"""Transition-distance representations (TDRP) used as auxiliary rewards for PPO.

A contrastive encoder maps states to embeddings whose Euclidean distance
tracks how many transitions separate them; the distance to goal embeddings
is subtracted from the sparse environment reward.
"""

from .config import ConfigError, ExperimentConfig, load_config, preset
from .envs import Env, EnvSpec, default_spec
from .harness import eval_policy, run_single_task, run_skill_chain, run_step_ablation
from .ppo import Policy, PpoConfig
from .representation import Encoder, TdrpConfig, train_encoder
from .rewards import RewardSpec, Shaper

__all__ = [
    "ConfigError", "Encoder", "Env", "EnvSpec", "ExperimentConfig", "Policy", "PpoConfig",
    "RewardSpec", "Shaper", "TdrpConfig", "default_spec", "eval_policy", "load_config", "preset",
    "run_single_task", "run_skill_chain", "run_step_ablation", "train_encoder",
]

__version__ = "0.1.0"
