"""Small deterministic environments with sparse rewards.

* ``chain``: a 1-D position on ``[0, L]`` starting at the origin.
* ``umaze``: a 2-D point mass in a U-shaped corridor. Start and goal sit at
  the two ends of the U, so they are close in raw coordinates but far apart
  in number of transitions.
* ``chain2skill``: a two-phase handoff task. Phase ``a`` drives from the left
  edge to a handoff line; phase ``b`` carries the object through a narrow
  opening with lateral motion locked, so it only succeeds when phase ``a``
  ended inside the opening's band.

Every observation is the intrinsic position followed by ``n_distractors``
i.i.d. Gaussian coordinates that are redrawn at every step.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

ENV_IDS = ("chain", "umaze", "chain2skill")


@dataclass(frozen=True)
class EnvSpec:
    env_id: str = "umaze"
    horizon: int = 200
    n_distractors: int = 0
    noise_scale: float = 1.0
    seed: int = 0
    delta: float = 0.1
    goal_radius: float = 0.1
    # chain
    chain_length: float = 1.0
    # umaze
    arm_length: float = 1.0
    corridor_width: float = 0.1
    arm_gap: float = 0.6
    # chain2skill
    phase: str = "a"
    handoff_x: float = 1.0
    opening_half_width: float = 0.3
    start_y_range: float = 0.9
    goal_x: float = 2.0

    def __post_init__(self) -> None:
        if self.env_id not in ENV_IDS:
            raise ValueError(f"unknown env id {self.env_id!r}; expected one of {ENV_IDS}")
        if self.horizon < 2:
            raise ValueError("horizon T must be at least 2")
        if self.n_distractors < 0 or self.noise_scale < 0:
            raise ValueError("distractor count and noise scale must be non-negative")
        if self.delta <= 0 or self.goal_radius <= 0:
            raise ValueError("delta and goal radius must be positive")
        if self.env_id == "chain2skill" and self.phase not in ("a", "b"):
            raise ValueError("chain2skill phase must be 'a' or 'b'")

    @property
    def intrinsic_dim(self) -> int:
        return 1 if self.env_id == "chain" else 2

    @property
    def state_dim(self) -> int:
        return self.intrinsic_dim + self.n_distractors

    @property
    def action_dim(self) -> int:
        return self.intrinsic_dim


def default_spec(env_id: str, **overrides) -> EnvSpec:
    """Per-environment defaults (episode lengths chosen so random play rarely succeeds)."""
    horizons = {"chain": 64, "umaze": 200, "chain2skill": 100}
    base = EnvSpec(env_id=env_id, horizon=horizons[env_id])
    return replace(base, **overrides) if overrides else base


def skill_a_env(spec: EnvSpec) -> EnvSpec:
    return replace(spec, env_id="chain2skill", phase="a")


def skill_b_env(spec: EnvSpec) -> EnvSpec:
    return replace(spec, env_id="chain2skill", phase="b")


@dataclass
class StepResult:
    state: np.ndarray
    reward: float
    done: bool
    success: bool


class EpisodeDone(RuntimeError):
    pass


class Env:
    """One episode-at-a-time environment instance."""

    def __init__(self, spec: EnvSpec):
        self.spec = spec
        self._pos: Optional[np.ndarray] = None
        self._rng: Optional[np.random.Generator] = None
        self.t = 0
        self.done = True

    # -- geometry -------------------------------------------------------
    def umaze_start(self) -> np.ndarray:
        w = self.spec.corridor_width
        return np.array([w / 2, w / 2])

    def goal_position(self) -> np.ndarray:
        s = self.spec
        if s.env_id == "chain":
            return np.array([s.chain_length])
        if s.env_id == "umaze":
            w = s.corridor_width
            return np.array([w / 2, w + s.arm_gap + w / 2])
        raise ValueError("chain2skill goals are lines, not points")

    def in_initial_region(self, pos: np.ndarray) -> bool:
        """Membership in the phase-b initial set (the handoff band in front of the opening)."""
        s = self.spec
        x, y = float(pos[0]), float(pos[1])
        return (s.handoff_x - s.goal_radius < x <= s.handoff_x) and abs(y) <= s.opening_half_width

    def _success(self, pos: np.ndarray) -> bool:
        return bool(success_mask(self.spec, np.asarray(pos, dtype=np.float64)[None])[0])

    # -- episode API ----------------------------------------------------
    def _observe(self) -> np.ndarray:
        s = self.spec
        noise = self._rng.normal(0.0, 1.0, s.n_distractors) * s.noise_scale
        return np.concatenate([self._pos, noise])

    def reset(self, episode_seed: int) -> np.ndarray:
        s = self.spec
        self._rng = np.random.default_rng([s.seed, int(episode_seed)])
        if s.env_id == "chain":
            self._pos = np.zeros(1)
        elif s.env_id == "umaze":
            w = s.corridor_width
            self._pos = self._rng.uniform(0.25 * w, 0.75 * w, size=2)
        elif s.phase == "a":
            self._pos = np.array([self._rng.uniform(0.0, 0.1),
                                  self._rng.uniform(-s.start_y_range, s.start_y_range)])
        else:
            self._pos = np.array([self._rng.uniform(s.handoff_x - s.goal_radius + 1e-6, s.handoff_x),
                                  self._rng.uniform(-s.opening_half_width, s.opening_half_width)])
        self.t = 0
        self.done = False
        return self._observe()

    def reset_to(self, position, episode_seed: int) -> np.ndarray:
        """Start an episode from a given intrinsic position (used for skill handoff)."""
        self.reset(episode_seed)
        pos = np.asarray(position, dtype=np.float64)[: self.spec.intrinsic_dim].copy()
        if pos.shape != (self.spec.intrinsic_dim,):
            raise ValueError("position has the wrong dimension")
        self._pos = pos
        return self._observe()

    @property
    def position(self) -> np.ndarray:
        return self._pos.copy()

    def step(self, action) -> StepResult:
        return step_batch([self], [action])[0]


def free_mask(spec: EnvSpec, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Which 2-D points lie in free space (umaze and chain2skill)."""
    s = spec
    if s.env_id == "umaze":
        w = s.corridor_width
        inside = (x >= 0.0) & (x <= s.arm_length) & (y >= 0.0) & (y <= 2 * w + s.arm_gap)
        in_wall = (x < s.arm_length - w) & (y > w) & (y < w + s.arm_gap)
        return inside & ~in_wall
    ok = np.abs(y) <= 1.0
    if s.phase == "a":
        return ok & (x >= 0.0) & (x <= s.handoff_x)
    ok &= (x >= s.handoff_x - s.goal_radius) & (x <= s.goal_x)
    in_wall = (x >= s.handoff_x + 0.2) & (x <= s.goal_x - 0.2) & (np.abs(y) > s.opening_half_width)
    return ok & ~in_wall


def success_mask(spec: EnvSpec, pos: np.ndarray) -> np.ndarray:
    s = spec
    if s.env_id == "chain2skill":
        target = s.handoff_x if s.phase == "a" else s.goal_x
        return np.abs(pos[:, 0] - target) < s.goal_radius
    goal = Env(spec).goal_position()
    return np.sqrt(np.sum((pos - goal) ** 2, axis=1)) < s.goal_radius


def step_batch(envs: Sequence[Env], actions) -> list[StepResult]:
    """Advance several live environments sharing one spec by one step each.

    Movement is axis-separated: the x move is applied if it lands in free
    space, then the y move from the updated x. A blocked axis stays put.
    """
    if not envs:
        return []
    s = envs[0].spec
    for env in envs:
        if env.done:
            raise EpisodeDone("step called on a finished episode; call reset first")
        if env.spec != s:
            raise ValueError("step_batch needs environments with one shared spec")
    a = np.asarray(actions, dtype=np.float64).reshape(len(envs), -1)
    if a.shape[1] != s.action_dim:
        raise ValueError(f"action dimension {a.shape[1]} != {s.action_dim}")
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite action")
    move = np.clip(a, -1.0, 1.0) * s.delta
    pos = np.array([env._pos for env in envs])
    if s.env_id == "chain":
        pos = np.clip(pos + move, 0.0, s.chain_length)
    else:
        if s.env_id == "chain2skill" and s.phase == "b":
            move[:, 1] = 0.0
        x, y = pos[:, 0], pos[:, 1]
        nx = np.where(free_mask(s, x + move[:, 0], y), x + move[:, 0], x)
        ny = np.where(free_mask(s, nx, y + move[:, 1]), y + move[:, 1], y)
        pos = np.stack([nx, ny], axis=1)
    success = success_mask(s, pos)
    out = []
    for env, p, ok in zip(envs, pos, success):
        env._pos = p.copy()
        env.t += 1
        env.done = bool(ok) or env.t >= s.horizon
        out.append(StepResult(env._observe(), 1.0 if ok else 0.0, env.done, bool(ok)))
    return out


def make_env(spec: EnvSpec) -> Env:
    return Env(spec)


def env_reset(spec: EnvSpec, episode_seed: int) -> tuple[Env, np.ndarray]:
    env = Env(spec)
    return env, env.reset(episode_seed)


def env_step(env: Env, action) -> StepResult:
    return env.step(action)


# -- scripted behaviour -------------------------------------------------

def umaze_waypoints(spec: EnvSpec) -> list[np.ndarray]:
    w = spec.corridor_width
    xr = spec.arm_length - w / 2
    top = w + spec.arm_gap + w / 2
    return [np.array([xr, w / 2]), np.array([xr, top]), np.array([w / 2, top])]


def scripted_action(env: Env, rng: np.random.Generator, speed: float = 1.0,
                    noise: float = 0.0, state: Optional[dict] = None) -> np.ndarray:
    """A solving controller for chain and umaze (``state`` tracks the waypoint index)."""
    s = env.spec
    pos = env.position
    if s.env_id == "chain":
        a = np.array([speed])
    elif s.env_id == "umaze":
        state = state if state is not None else {}
        wps = umaze_waypoints(s)
        k = state.get("wp", 0)
        while k < len(wps) - 1 and np.max(np.abs(wps[k] - pos)) < 0.5 * s.delta:
            k += 1
        state["wp"] = k
        diff = (wps[k] - pos) / s.delta
        a = np.clip(diff, -speed, speed)
    else:
        target_x = s.handoff_x if s.phase == "a" else s.goal_x
        a = np.array([speed, 0.0]) if target_x > pos[0] else np.zeros(2)
    if noise > 0:
        a = a + rng.normal(0.0, noise, a.shape)
    return np.clip(a, -1.0, 1.0)


def scripted_trajectory(spec: EnvSpec, episode_seed: int, speed: float = 1.0,
                        noise: float = 0.0) -> tuple[list[np.ndarray], bool]:
    """Roll out the scripted controller; returns the observed states and success."""
    env = Env(spec)
    rng = np.random.default_rng([spec.seed, int(episode_seed), 7])
    states = [env.reset(episode_seed)]
    memo: dict = {}
    res = None
    while not env.done:
        res = env.step(scripted_action(env, rng, speed, noise, memo))
        states.append(res.state)
    return states, bool(res.success)
