"""Auxiliary rewards from embedding distances, and the online goal set.

All three generators subtract a scaled embedding distance from the raw
environment reward, so a shaped reward never exceeds the raw one:

* ``goal_reward``           distance to one given goal state
* ``clustered_goal_reward`` distance to the nearest k-means center of goal embeddings
* ``chain_reward``          distance to the nearest center of the next skill's start states
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .clustering import kmeans
from .representation import Encoder, encode

MODES = ("none", "goal_state", "clustered_goals", "skill_chain")


@dataclass
class RewardSpec:
    mode: str = "none"
    lambda1: float = 0.1
    lambda2: float = 0.1
    n_clusters: int = 8
    # restarts for the per-iteration center refresh; centers change every round anyway
    kmeans_restarts: int = 5
    goal_state: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown reward mode {self.mode!r}; expected one of {MODES}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("reward scales must be non-negative")
        if self.n_clusters < 1:
            raise ValueError("cluster count must be >= 1")
        if self.kmeans_restarts < 1:
            raise ValueError("kmeans_restarts must be >= 1")
        if self.mode == "goal_state" and self.goal_state is None:
            raise ValueError("goal_state mode needs a goal state")


def _min_center_distance(emb: np.ndarray, centers) -> np.ndarray:
    c = np.asarray(centers, dtype=np.float64)
    if c.ndim != 2 or len(c) == 0:
        raise ValueError("need a non-empty (k, d) array of centers")
    if emb.shape[-1] != c.shape[1]:
        raise ValueError(f"embedding dim {emb.shape[-1]} != center dim {c.shape[1]}")
    d = np.sqrt(np.sum((emb[..., None, :] - c) ** 2, axis=-1))
    return d.min(axis=-1)


def goal_reward(raw_reward, state, goal, lambda1: float, encoder: Encoder):
    if lambda1 < 0:
        raise ValueError("lambda1 must be non-negative")
    dist = np.linalg.norm(encode(encoder, state) - encode(encoder, goal), axis=-1)
    return raw_reward - lambda1 * dist


def clustered_goal_reward(raw_reward, state, centers, lambda1: float, encoder: Encoder):
    return raw_reward - lambda1 * _min_center_distance(encode(encoder, state), centers)


def chain_reward(raw_reward, state, next_init_centers, lambda2: float, encoder: Encoder):
    return raw_reward - lambda2 * _min_center_distance(encode(encoder, state), next_init_centers)


@dataclass
class GoalSet:
    """FIFO of raw goal states with k-means centers cached per encoder round."""

    capacity: int = 128
    states: deque = field(default_factory=deque)
    _centers: Optional[np.ndarray] = None
    _centers_round: Optional[int] = None

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.states = deque(self.states, maxlen=self.capacity)

    def __len__(self) -> int:
        return len(self.states)

    def add(self, state) -> None:
        self.states.append(np.asarray(state, dtype=np.float64).copy())
        self._centers = None

    def cached_centers(self, encoder_round: int) -> Optional[np.ndarray]:
        if self._centers is not None and self._centers_round == encoder_round:
            return self._centers
        return None

    def as_array(self) -> np.ndarray:
        return np.array(self.states)


def update_goal_set(goal_set: GoalSet, final_state, success: bool) -> GoalSet:
    if success:
        goal_set.add(final_state)
    return goal_set


def refresh_centers(goal_set: GoalSet, encoder: Encoder, n: int, seed=0, n_init: int = 30) -> np.ndarray:
    """Cluster the embedded goal states into ``min(n, len)`` centers (cached)."""
    if len(goal_set) == 0:
        raise ValueError("goal set is empty; shaping falls back to raw reward until the first success")
    cached = goal_set.cached_centers(encoder.rounds)
    if cached is not None:
        return cached
    emb = encode(encoder, goal_set.as_array())
    centers = kmeans(emb, min(n, len(goal_set)), seed=seed, n_init=n_init).centers
    goal_set._centers = centers
    goal_set._centers_round = encoder.rounds
    return centers


@dataclass
class Shaper:
    """Reward function for one rollout: a frozen encoder plus fixed targets."""

    spec: RewardSpec
    encoder: Optional[Encoder] = None
    centers: Optional[np.ndarray] = None

    @property
    def active(self) -> bool:
        if self.spec.mode == "none" or self.encoder is None:
            return False
        if self.spec.mode == "goal_state":
            return True
        return self.centers is not None and len(self.centers) > 0

    def __call__(self, raw_rewards, states) -> np.ndarray:
        raw = np.asarray(raw_rewards, dtype=np.float64)
        if not self.active:
            return raw.copy()
        m = self.spec.mode
        if m == "goal_state":
            return goal_reward(raw, states, self.spec.goal_state, self.spec.lambda1, self.encoder)
        if m == "clustered_goals":
            return clustered_goal_reward(raw, states, self.centers, self.spec.lambda1, self.encoder)
        return chain_reward(raw, states, self.centers, self.spec.lambda2, self.encoder)

    def distance(self, states) -> Optional[np.ndarray]:
        """Embedding distance to the shaping target, or None when inactive."""
        if not self.active:
            return None
        emb = encode(self.encoder, states)
        if self.spec.mode == "goal_state":
            return np.linalg.norm(emb - encode(self.encoder, self.spec.goal_state), axis=-1)
        return _min_center_distance(emb, self.centers)
