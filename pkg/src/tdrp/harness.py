"""Experiment drivers: joint encoder/policy training, skill-chain fine-tuning,
the ``step`` ablation and policy evaluation.

Randomness for one run flows from a single root seed; each consumer gets its
own stream keyed by a fixed tag, so e.g. changing the number of k-means
restarts does not perturb the rollout noise.
"""

from __future__ import annotations

import logging
import time
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import ExperimentConfig, dump_config
from .envs import Env, EnvSpec, scripted_trajectory, skill_a_env, skill_b_env
from .clustering import kmeans
from .numcore import AdamState, NumericError
from .ppo import Policy, collect_rollout, evaluate, ppo_update, run_episodes
from .representation import (Encoder, TdrpConfig, distance_rank_correlation, encode, export_embeddings,
                             train_encoder, valid_anchors)
from .rewards import GoalSet, RewardSpec, Shaper, refresh_centers
from .storage import load_checkpoint, read_demonstrations, save_checkpoint, write_csv

log = logging.getLogger(__name__)

_STREAMS = {"env": 1, "policy_init": 2, "encoder_init": 3, "shuffle": 4, "kmeans": 5,
            "eval": 6, "rollout": 7, "encoder_train": 8, "chain": 9}

METRIC_COLUMNS = [
    "iteration", "env_steps", "mean_raw_return", "success_rate", "train_success_rate",
    "mean_shaped_reward", "encoder_loss", "mean_goal_distance", "policy_loss", "value_loss",
    "approx_kl", "clip_fraction", "goal_set_size",
]


def stream(root: int, name: str, *extra: int) -> np.random.Generator:
    return np.random.default_rng([int(root), _STREAMS[name], *extra])


def stream_seed(root: int, name: str, *extra: int) -> int:
    return int(stream(root, name, *extra).integers(1 << 31))


class TrajectoryBuffer:
    """FIFO of whole trajectories capped by total transitions, plus pinned demonstrations."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.items: deque = deque()
        self.pinned: list[np.ndarray] = []
        self._n = 0

    def add(self, states: np.ndarray) -> None:
        self.items.append(states)
        self._n += len(states) - 1
        while self._n > self.capacity and len(self.items) > 1:
            old = self.items.popleft()
            self._n -= len(old) - 1

    def pin(self, states: np.ndarray) -> None:
        self.pinned.append(states)

    @property
    def n_transitions(self) -> int:
        return self._n

    def trajectories(self) -> list[np.ndarray]:
        return self.pinned + list(self.items)


@dataclass
class RunResult:
    out_dir: Path
    rows: list[dict] = field(default_factory=list)
    policy: Optional[Policy] = None
    encoder: Optional[Encoder] = None
    goal_set: Optional[GoalSet] = None
    buffer: Optional[TrajectoryBuffer] = None

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=np.float64)


def _demo_trajectories(config: ExperimentConfig) -> list[np.ndarray]:
    if not config.demo_file:
        return []
    trajs = read_demonstrations(config.demo_file)
    for t in trajs:
        if t.shape[1] != config.env.state_dim:
            raise ValueError(f"demonstration state dim {t.shape[1]} != env state dim {config.env.state_dim}")
    return trajs


def _trainable(buffer: TrajectoryBuffer, step: int) -> bool:
    return len(valid_anchors([len(t) for t in buffer.trajectories()], step)) > 0


def run_single_task(config: ExperimentConfig, seed: int, out_dir=None,
                    write_files: bool = True, policy: Optional[Policy] = None,
                    encoder: Optional[Encoder] = None) -> RunResult:
    """Joint encoder/policy training on one environment for one seed.

    Each iteration: freeze the encoder, refresh goal centers, collect
    rollouts with shaped rewards, store successes in the goal set, run one
    encoder training round on the buffer, one PPO update, then a
    deterministic evaluation on raw rewards.
    """
    config.validate()
    out = Path(out_dir if out_dir is not None else Path(config.out_dir) / f"seed_{seed}")
    spec = replace(config.env, seed=stream_seed(seed, "env"))
    policy = policy or Policy.create(spec.state_dim, spec.action_dim, config.ppo, stream(seed, "policy_init"))
    adam = AdamState.for_params(policy, lr=config.ppo.lr)
    encoder = encoder or Encoder.create(spec.state_dim, config.tdrp, stream(seed, "encoder_init"))
    goal_set = GoalSet(config.goal_capacity)
    buffer = TrajectoryBuffer(config.buffer_transitions)
    enc_rng = stream(seed, "encoder_train")
    shuffle_rng = stream(seed, "shuffle")
    rollout_rng = stream(seed, "rollout")
    config_text = dump_config(config)

    for traj in _demo_trajectories(config):
        buffer.pin(traj)
        goal_set.add(traj[-1])
    if config.encoder_warmup_steps and _trainable(buffer, config.tdrp.step):
        encoder, _ = train_encoder(encoder, buffer.trajectories(), enc_rng, config.encoder_warmup_steps)

    result = RunResult(out, policy=policy, encoder=encoder, goal_set=goal_set, buffer=buffer)
    if write_files:
        save_checkpoint(out / "ckpt" / "iter_0" / "checkpoint.npz", policy, encoder, config_text, 0,
                        goal_set.as_array())
    timing = []
    env_steps = 0
    episode_counter = 0
    for it in range(1, config.iterations + 1):
        t0 = time.perf_counter()
        snap = encoder.snapshot()
        centers = None
        if config.reward.mode == "clustered_goals" and len(goal_set):
            centers = refresh_centers(goal_set, snap, config.reward.n_clusters,
                                      stream(seed, "kmeans", it), config.reward.kmeans_restarts)
        shaper = Shaper(config.reward, snap, centers)
        batch = collect_rollout(spec, policy, shaper, config.ppo.rollout_steps, rollout_rng,
                                config.ppo.n_envs, goal_set, episode_offset=episode_counter)
        episode_counter += len(batch.episodes)
        env_steps += batch.n_steps
        for ep in batch.episodes:
            buffer.add(ep.states)

        enc_loss = float("nan")
        if config.tdrp.train_steps and _trainable(buffer, config.tdrp.step):
            encoder, est = train_encoder(encoder, buffer.trajectories(), enc_rng,
                                         n_pinned=len(buffer.pinned))
            enc_loss = float(np.mean(est.losses))
        try:
            policy, adam, ust = ppo_update(batch, policy, adam, config.ppo, shuffle_rng)
        except NumericError:
            if write_files:
                save_checkpoint(out / "crash" / "checkpoint.npz", policy, encoder, config_text, it)
            raise
        success, ret = evaluate(spec, policy, config.eval_episodes, stream_seed(seed, "eval", it))
        dist = shaper.distance(batch.flat("states"))
        row = {
            "iteration": it,
            "env_steps": env_steps,
            "mean_raw_return": ret,
            "success_rate": success,
            "train_success_rate": batch.success_rate,
            "mean_shaped_reward": float(batch.flat("shaped").mean()),
            "encoder_loss": enc_loss,
            "mean_goal_distance": float(dist.mean()) if dist is not None else float("nan"),
            "policy_loss": ust.policy_loss,
            "value_loss": ust.value_loss,
            "approx_kl": ust.approx_kl,
            "clip_fraction": ust.clip_fraction,
            "goal_set_size": len(goal_set),
        }
        result.rows.append(row)
        timing.append((it, time.perf_counter() - t0))
        log.info("seed %d iter %d success %.2f train %.2f", seed, it, success, batch.success_rate)
        if write_files and (it % config.checkpoint_every == 0 or it == config.iterations):
            save_checkpoint(out / "ckpt" / f"iter_{it}" / "checkpoint.npz", policy, encoder,
                            config_text, it, goal_set.as_array())

    result.policy, result.encoder = policy, encoder
    if write_files:
        write_csv(out / "metrics.csv", METRIC_COLUMNS, [[r[c] for c in METRIC_COLUMNS] for r in result.rows])
        write_csv(out / "timing.csv", ["iteration", "wall_time_s"], timing)
        (out / "config.txt").write_text(config_text)
    return result


def record_demonstrations(spec: EnvSpec, n: int, seed: int, noise: float = 0.3,
                          speed: float = 1.0) -> list[np.ndarray]:
    """Successful scripted trajectories (failed attempts are skipped)."""
    if n < 1:
        raise ValueError("need at least one demonstration")
    out: list[np.ndarray] = []
    k = 0
    while len(out) < n:
        states, ok = scripted_trajectory(spec, stream_seed(seed, "env", k), speed, noise)
        k += 1
        if ok:
            out.append(np.array(states))
        elif k > 20 * n:
            raise RuntimeError("scripted controller keeps failing; check the environment spec")
    return out


def eval_policy(checkpoint, env: EnvSpec, episodes: int, seed: int, n_envs: Optional[int] = None):
    """Deterministic (mean-action) evaluation of a saved policy on raw rewards."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    policy = checkpoint if isinstance(checkpoint, Policy) else load_checkpoint(checkpoint)[0]
    if policy.mean_net.in_dim != env.state_dim or policy.mean_net.out_dim != env.action_dim:
        raise ValueError("checkpoint does not match the environment's state/action dimensions")
    return evaluate(env, policy, episodes, seed, n_envs)


# -- skill chaining -----------------------------------------------------------

CHAIN_COLUMNS = ["iteration", "mean_center_distance", "chained_success_pre", "chained_success_post"]


@dataclass
class ChainResult:
    rows: list[dict]
    success_pre: float
    success_post: float
    policy_a: Policy
    encoder: Encoder
    centers: np.ndarray


def pretrain_skills(config: ExperimentConfig, seed: int, out_dir) -> tuple[Path, Path]:
    """Train skills A and B separately on raw rewards; returns their final checkpoints."""
    out = Path(out_dir)
    paths = []
    for name, env in (("skill_a", skill_a_env(config.env)), ("skill_b", skill_b_env(config.env))):
        cfg = replace(config, env=env, reward=replace(config.reward, mode="none"),
                      tdrp=replace(config.tdrp, train_steps=0), demo_file=None, encoder_warmup_steps=0)
        run_single_task(cfg, seed, out / name)
        paths.append(out / name / "ckpt" / f"iter_{config.iterations}" / "checkpoint.npz")
    return paths[0], paths[1]


def chained_success(spec: EnvSpec, policy_a: Policy, policy_b: Policy, episodes: int, seed: int) -> float:
    """Run A to completion, hand its final position to B, run B; fraction where both succeed."""
    base = stream_seed(seed, "chain", 0)
    eps_a = run_episodes(skill_a_env(spec), policy_a, range(base, base + episodes), None, episodes)
    handed = [i for i, e in enumerate(eps_a) if e.success]
    if not handed:
        return 0.0
    starts = [eps_a[i].handoff for i in handed]
    eps_b = run_episodes(skill_b_env(spec), policy_b, [base + i for i in handed], None, len(handed), starts)
    return sum(e.success for e in eps_b) / episodes


def _chain_encoder(config: ExperimentConfig, spec: EnvSpec, policy_a: Policy, policy_b: Policy,
                   seed: int) -> Encoder:
    """Encoder trained once on exploratory rollouts of both skills, then frozen.

    Skill A is rolled out with widened action noise so that lateral motion,
    which the pretrained skill rarely makes, appears in the buffer.
    """
    rng = stream(seed, "encoder_train")
    explore = Policy(policy_a.mean_net, np.zeros_like(policy_a.log_std), policy_a.value_net)
    n = config.tdrp.batch_anchors
    eps = run_episodes(skill_a_env(spec), explore, range(4 * n), rng, 4 * n)
    eps += run_episodes(skill_b_env(spec), policy_b, range(n), rng, n)
    trajs = [e.states for e in eps]
    encoder = Encoder.create(spec.state_dim, config.tdrp, stream(seed, "encoder_init"))
    steps = max(config.encoder_warmup_steps, config.tdrp.train_steps)
    encoder, _ = train_encoder(encoder, trajs, rng, steps)
    return encoder


def run_skill_chain(config: ExperimentConfig, seed: int, checkpoint_a, checkpoint_b,
                    out_dir=None, finetune_iterations: Optional[int] = None,
                    chain_episodes: int = 200, write_files: bool = True) -> ChainResult:
    """Fine-tune skill A toward skill B's initial states and measure chained success.

    Skill B's initial states are the start states of its successful
    episodes; their embeddings are clustered into ``reward.n_clusters``
    centers and skill A is fine-tuned with the chaining reward. The encoder
    is frozen during fine-tuning so that the per-iteration distance metric
    is measured on one fixed scale.
    """
    policy_a = load_checkpoint(checkpoint_a)[0]
    policy_b = load_checkpoint(checkpoint_b)[0]
    spec = replace(config.env, seed=stream_seed(seed, "env"))
    iters = config.iterations if finetune_iterations is None else finetune_iterations
    if iters < 0:
        raise ValueError("finetune_iterations must be >= 0")
    if chain_episodes < 1:
        raise ValueError("chain_episodes must be >= 1")
    out = Path(out_dir if out_dir is not None else Path(config.out_dir) / f"seed_{seed}")
    spec_a, spec_b = skill_a_env(spec), skill_b_env(spec)

    encoder = _chain_encoder(config, spec, policy_a, policy_b, seed)
    b_eps = run_episodes(spec_b, policy_b, range(10_000, 10_000 + 4 * config.tdrp.batch_anchors),
                         stream(seed, "chain", 1), config.ppo.n_envs)
    init_states = np.array([e.states[0] for e in b_eps if e.success] or [e.states[0] for e in b_eps])
    centers = kmeans(encode(encoder, init_states), min(config.reward.n_clusters, len(init_states)),
                     seed=stream_seed(seed, "kmeans")).centers
    shaper = Shaper(replace(config.reward, mode="skill_chain"), encoder, centers)

    pre = chained_success(spec, policy_a, policy_b, chain_episodes, seed)
    adam = AdamState.for_params(policy_a, lr=config.ppo.lr)
    rollout_rng, shuffle_rng = stream(seed, "rollout"), stream(seed, "shuffle")
    rows = []
    episode_counter = 0
    for it in range(1, iters + 1):
        batch = collect_rollout(spec_a, policy_a, shaper, config.ppo.rollout_steps, rollout_rng,
                                config.ppo.n_envs, episode_offset=episode_counter)
        episode_counter += len(batch.episodes)
        terminal = np.array([e.states[-1] for e in batch.episodes])
        rows.append({"iteration": it, "mean_center_distance": float(shaper.distance(terminal).mean())})
        policy_a, adam, _ = ppo_update(batch, policy_a, adam, config.ppo, shuffle_rng)
        log.info("chain seed %d iter %d center distance %.3f", seed, it, rows[-1]["mean_center_distance"])
    post = chained_success(spec, policy_a, policy_b, chain_episodes, seed) if iters else pre
    for r in rows:
        r["chained_success_pre"], r["chained_success_post"] = pre, post

    if write_files:
        body = [[r[c] for c in CHAIN_COLUMNS] for r in rows] or [[0, float("nan"), pre, post]]
        write_csv(out / "chain_report.csv", CHAIN_COLUMNS, body)
        save_checkpoint(out / "ckpt" / f"iter_{iters}" / "checkpoint.npz", policy_a, encoder,
                        dump_config(config), iters, init_states)
    return ChainResult(rows, pre, post, policy_a, encoder, centers)


# -- step ablation --------------------------------------------------------------

ABLATION_COLUMNS = ["step", "spearman_rho", "raw_rho", "final_loss"]


def ablation_buffer(spec: EnvSpec, n: int, seed: int, speed: float = 0.07,
                    noise: float = 0.2, horizon: int = 200) -> list[np.ndarray]:
    """Slow noisy scripted trajectories.

    On the chain the defaults give roughly 150 transitions per trajectory,
    so the largest tested step (24) spans about a sixth of a trajectory.
    """
    return record_demonstrations(replace(spec, horizon=max(spec.horizon, horizon)), n, seed,
                                 noise=noise, speed=speed)


def run_step_ablation(config: ExperimentConfig, steps: Sequence[int], seed: int,
                      buffer: Optional[Sequence[np.ndarray]] = None, heldout: Optional[Sequence[np.ndarray]] = None,
                      train_steps: Optional[int] = None, out_dir=None, write_files: bool = True) -> list[dict]:
    """Train one encoder per ``step`` on a shared buffer; Spearman rho on held-out trajectories."""
    spec = replace(config.env, seed=stream_seed(seed, "env"))
    buffer = list(buffer) if buffer is not None else ablation_buffer(spec, 50, seed)
    heldout = list(heldout) if heldout is not None else ablation_buffer(spec, 10, seed + 7919)
    shortest = min(len(t) for t in buffer)
    for step in steps:
        if step < 1:
            raise ValueError(f"step must be >= 1, got {step}")
        if not len(valid_anchors([len(t) for t in buffer], step)):
            raise ValueError(f"step {step} leaves no negatives: every trajectory has at most "
                             f"{step + 1} states (shortest has {shortest})")
    raw_rho = distance_rank_correlation(None, heldout)
    out = Path(out_dir) if out_dir is not None else Path(config.out_dir)
    rows = []
    for step in steps:
        cfg = replace(config.tdrp, step=int(step))
        enc = Encoder.create(spec.state_dim, cfg, stream(seed, "encoder_init"))
        n = config.encoder_warmup_steps if train_steps is None else train_steps
        enc, st = train_encoder(enc, buffer, stream(seed, "encoder_train", int(step)), n or cfg.train_steps)
        rho = distance_rank_correlation(enc, heldout)
        rows.append({"step": int(step), "spearman_rho": rho, "raw_rho": raw_rho,
                     "final_loss": st.final if st.losses else float("nan")})
        if write_files:
            export_embeddings(out / f"embeddings_step{step}.csv", enc, heldout)
    if write_files:
        write_csv(out / "ablation.csv", ABLATION_COLUMNS, [[r[c] for c in ABLATION_COLUMNS] for r in rows])
    return rows
