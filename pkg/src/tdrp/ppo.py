"""Clipped-surrogate PPO with a Gaussian policy and a separate value network."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .envs import Env, EnvSpec, step_batch
from .numcore import AdamState, MlpParams, NumericError, adam_step, forward_with_cache, init_mlp, mlp_backward, mlp_forward
from .rewards import GoalSet, Shaper

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.2
    minibatch: int = 512
    epochs: int = 8
    critic_coef: float = 2.0
    entropy_coef: float = 0.0
    lr: float = 1e-4
    horizon: int = 32
    rollout_steps: int = 2048
    n_envs: int = 8
    hidden: tuple[int, ...] = (256, 128, 64)
    init_log_std: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must be in [0, 1)")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("GAE lambda must be in [0, 1]")
        if self.clip <= 0:
            raise ValueError("clip epsilon must be positive")
        if self.minibatch < 1 or self.epochs < 0 or self.rollout_steps < 1 or self.n_envs < 1:
            raise ValueError("minibatch, rollout_steps, n_envs must be >= 1 and epochs >= 0")
        if self.horizon < 1:
            raise ValueError("bootstrap horizon must be >= 1")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")


@dataclass
class Policy:
    mean_net: MlpParams
    log_std: np.ndarray
    value_net: MlpParams

    @classmethod
    def create(cls, state_dim: int, action_dim: int, config: PpoConfig,
               rng: np.random.Generator) -> "Policy":
        mean = init_mlp([state_dim, *config.hidden, action_dim], rng, "tanh", "tanh", output_scale=0.01)
        value = init_mlp([state_dim, *config.hidden, 1], rng, "tanh", "identity")
        return cls(mean, np.full(action_dim, float(config.init_log_std)), value)

    def arrays(self) -> list[np.ndarray]:
        return self.mean_net.arrays() + [self.log_std] + self.value_net.arrays()

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "Policy":
        arrays = list(arrays)
        nm = len(self.mean_net.arrays())
        return Policy(self.mean_net.with_arrays(arrays[:nm]), arrays[nm],
                      self.value_net.with_arrays(arrays[nm + 1:]))

    def copy(self) -> "Policy":
        return self.with_arrays([a.copy() for a in self.arrays()])

    def mean(self, states) -> np.ndarray:
        return mlp_forward(self.mean_net, states)

    def value(self, states) -> np.ndarray:
        return mlp_forward(self.value_net, states)[..., 0]

    def log_prob(self, states, actions) -> np.ndarray:
        return gaussian_log_prob(actions, self.mean(states), self.log_std)

    def entropy(self) -> float:
        return float(np.sum(self.log_std + 0.5 * (_LOG_2PI + 1.0)))


def gaussian_log_prob(actions, mean, log_std) -> np.ndarray:
    z = (np.asarray(actions) - mean) * np.exp(-log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - 0.5 * mean.shape[-1] * _LOG_2PI


# -- advantages -----------------------------------------------------------

def compute_gae(rewards, values, bootstrap: float, gamma: float, lam: float,
                horizon: Optional[int] = None):
    """GAE over one episode segment.

    ``values`` are V(s_0..s_{n-1}); ``bootstrap`` is V(s_n) for a truncated
    segment and 0 for a terminal one. With ``horizon`` H the sum of TD errors
    is cut after H terms, bootstrapping from V(s_{t+H}); at ``lam = 1`` this
    is the H-step return minus V(s_t).
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if r.shape != v.shape or r.ndim != 1:
        raise ValueError("rewards and values must be aligned 1-D arrays")
    n = len(r)
    v_next = np.append(v[1:], bootstrap)
    delta = r + gamma * v_next - v
    adv = np.zeros(n)
    acc = 0.0
    gl = gamma * lam
    for t in range(n - 1, -1, -1):
        acc = delta[t] + gl * acc
        adv[t] = acc
    if horizon is not None and horizon < n:
        # A_t = sum_{l<H} (gl)^l delta_{t+l} + (gl)^H A_{t+H}
        adv[: n - horizon] -= gl ** horizon * adv[horizon:]
    return adv, adv + v


# -- rollouts ---------------------------------------------------------------

@dataclass
class Episode:
    states: np.ndarray          # (T+1, d) including the final state
    actions: np.ndarray         # (T, a)
    logp: np.ndarray            # (T,)
    raw: np.ndarray             # (T,)
    shaped: np.ndarray          # (T,)
    values: np.ndarray          # (T+1,)
    success: bool
    truncated: bool             # ended by the time limit, not by success
    handoff: Optional[np.ndarray] = None  # intrinsic final position

    @property
    def length(self) -> int:
        return len(self.actions)

    @property
    def raw_return(self) -> float:
        return float(self.raw.sum())


@dataclass
class RolloutBatch:
    episodes: list[Episode] = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return sum(e.length for e in self.episodes)

    def flat(self, key: str) -> np.ndarray:
        if key == "states":
            return np.concatenate([e.states[:-1] for e in self.episodes])
        if key == "values":
            return np.concatenate([e.values[:-1] for e in self.episodes])
        return np.concatenate([getattr(e, key) for e in self.episodes])

    @property
    def success_rate(self) -> float:
        return float(np.mean([e.success for e in self.episodes])) if self.episodes else 0.0

    @property
    def mean_raw_return(self) -> float:
        return float(np.mean([e.raw_return for e in self.episodes])) if self.episodes else 0.0


def run_episodes(spec: EnvSpec, policy: Policy, episode_seeds: Sequence[int],
                 rng: Optional[np.random.Generator], n_envs: int = 8,
                 start_positions: Optional[Sequence] = None) -> list[Episode]:
    """Run the given episodes in lockstep batches of ``n_envs``.

    ``rng=None`` acts with the policy mean (evaluation); otherwise actions are
    sampled. Shaped rewards are left equal to raw rewards; :func:`collect_rollout`
    fills them in.
    """
    out: list[Episode] = []
    seeds = list(episode_seeds)
    for lo in range(0, len(seeds), n_envs):
        wave = seeds[lo:lo + n_envs]
        envs = [Env(spec) for _ in wave]
        if start_positions is None:
            obs = [env.reset(s) for env, s in zip(envs, wave)]
        else:
            obs = [env.reset_to(start_positions[lo + i], s) for i, (env, s) in enumerate(zip(envs, wave))]
        recs = [dict(states=[o], actions=[], logp=[], raw=[], success=False) for o in obs]
        live = list(range(len(envs)))
        while live:
            x = np.array([recs[i]["states"][-1] for i in live])
            mu = policy.mean(x)
            if rng is None:
                act = mu
            else:
                act = mu + np.exp(policy.log_std) * rng.standard_normal(mu.shape)
            lp = gaussian_log_prob(act, mu, policy.log_std)
            still = []
            results = step_batch([envs[i] for i in live], act)
            for j, i in enumerate(live):
                res = results[j]
                rec = recs[i]
                rec["states"].append(res.state)
                rec["actions"].append(act[j])
                rec["logp"].append(lp[j])
                rec["raw"].append(res.reward)
                if res.done:
                    rec["success"] = res.success
                else:
                    still.append(i)
            live = still
        for env, rec in zip(envs, recs):
            states = np.array(rec["states"])
            raw = np.array(rec["raw"])
            out.append(Episode(states, np.array(rec["actions"]), np.array(rec["logp"]), raw,
                               raw.copy(), np.zeros(len(states)), bool(rec["success"]),
                               not rec["success"], env.position))
    return out


def collect_rollout(spec: EnvSpec, policy: Policy, shaper: Shaper, steps: int, seed,
                    n_envs: int = 8, goal_set: Optional[GoalSet] = None,
                    episode_offset: int = 0) -> RolloutBatch:
    """Sample whole episodes until at least ``steps`` transitions are gathered."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    batch = RolloutBatch()
    next_seed = episode_offset
    while batch.n_steps < steps:
        wave = list(range(next_seed, next_seed + n_envs))
        next_seed += n_envs
        batch.episodes.extend(run_episodes(spec, policy, wave, rng, n_envs))
    for ep in batch.episodes:
        ep.shaped = shaper(ep.raw, ep.states[:-1])
        ep.values = policy.value(ep.states)
        if goal_set is not None:
            goal_set_update(goal_set, ep)
    return batch


def goal_set_update(goal_set: GoalSet, ep: Episode) -> None:
    if ep.success:
        goal_set.add(ep.states[-1])


def evaluate(spec: EnvSpec, policy: Policy, episodes: int, seed: int, n_envs: Optional[int] = None):
    """Deterministic evaluation on raw rewards: ``(success rate, mean raw return)``.

    Episodes are independent of the wave size, so by default all of them run
    in one lockstep wave.
    """
    if episodes < 1:
        raise ValueError("need at least one evaluation episode")
    base = int(np.random.default_rng(seed).integers(1 << 30))
    eps = run_episodes(spec, policy, range(base, base + episodes), None, n_envs or episodes)
    return float(np.mean([e.success for e in eps])), float(np.mean([e.raw_return for e in eps]))


# -- losses -----------------------------------------------------------------

@dataclass
class Minibatch:
    states: np.ndarray
    actions: np.ndarray
    old_logp: np.ndarray
    advantages: np.ndarray
    targets: np.ndarray

    def take(self, idx) -> "Minibatch":
        return Minibatch(self.states[idx], self.actions[idx], self.old_logp[idx],
                         self.advantages[idx], self.targets[idx])


def _zero_grads(policy: Policy) -> Policy:
    return policy.with_arrays([np.zeros_like(a) for a in policy.arrays()])


def clipped_objective(ratio, adv, clip: float) -> np.ndarray:
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv)


def policy_loss(policy: Policy, mb: Minibatch, clip: float):
    """Negative mean clipped surrogate and its gradient (value net untouched)."""
    mu, cache = forward_with_cache(policy.mean_net, mb.states)
    inv_var = np.exp(-2.0 * policy.log_std)
    diff = mb.actions - mu
    logp = gaussian_log_prob(mb.actions, mu, policy.log_std)
    ratio = np.exp(logp - mb.old_logp)
    if not np.all(np.isfinite(ratio)):
        raise NumericError("non-finite probability ratio")
    adv = mb.advantages
    obj = clipped_objective(ratio, adv, clip)
    n = len(adv)
    value = -float(obj.mean())
    # gradient flows only where the unclipped branch attains the min
    unclipped = ratio * adv <= np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv
    d_logp = -(unclipped * ratio * adv) / n
    d_mu = d_logp[:, None] * diff * inv_var
    d_log_std = np.sum(d_logp[:, None] * (diff * diff * inv_var - 1.0), axis=0)
    g = _zero_grads(policy)
    return value, Policy(mlp_backward(policy.mean_net, cache, d_mu), d_log_std, g.value_net)


def value_loss(policy: Policy, mb: Minibatch, coef: float = 1.0):
    """``coef`` times the mean squared error of V against the targets."""
    v, cache = forward_with_cache(policy.value_net, mb.states)
    err = v[:, 0] - mb.targets
    value = coef * float(np.mean(err * err))
    d_v = (2.0 * coef / len(err)) * err[:, None]
    g = _zero_grads(policy)
    return value, Policy(g.mean_net, g.log_std, mlp_backward(policy.value_net, cache, d_v))


def combined_loss(policy: Policy, mb: Minibatch, config: PpoConfig):
    pl, pg = policy_loss(policy, mb, config.clip)
    vl, vg = value_loss(policy, mb, config.critic_coef)
    ent = policy.entropy()
    grads = [a + b for a, b in zip(pg.arrays(), vg.arrays())]
    nm = len(policy.mean_net.arrays())
    grads[nm] = grads[nm] - config.entropy_coef * np.ones_like(policy.log_std)
    total = pl + vl - config.entropy_coef * ent
    return total, policy.with_arrays(grads), (pl, vl, ent)


@dataclass
class UpdateStats:
    policy_loss: float = 0.0
    value_loss: float = 0.0
    entropy: float = 0.0
    approx_kl: float = 0.0
    clip_fraction: float = 0.0
    n_updates: int = 0


def build_minibatch(batch: RolloutBatch, config: PpoConfig) -> Minibatch:
    """Flatten episodes and attach normalized GAE advantages and value targets."""
    advs, targets = [], []
    for ep in batch.episodes:
        boot = float(ep.values[-1]) if ep.truncated else 0.0
        a, t = compute_gae(ep.shaped, ep.values[:-1], boot, config.gamma, config.gae_lambda,
                           config.horizon)
        advs.append(a)
        targets.append(t)
    adv = np.concatenate(advs)
    std = adv.std()
    adv = (adv - adv.mean()) / (std if std > 1e-8 else 1.0)
    return Minibatch(batch.flat("states"), batch.flat("actions"), batch.flat("logp"),
                     adv, np.concatenate(targets))


def ppo_update(batch: RolloutBatch, policy: Policy, adam: AdamState, config: PpoConfig, seed):
    """Epochs of shuffled minibatch Adam steps on the combined loss."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    data = build_minibatch(batch, config)
    n = len(data.advantages)
    stats = UpdateStats()
    mbs = min(config.minibatch, n)
    for _ in range(config.epochs):
        perm = rng.permutation(n)
        for lo in range(0, n - mbs + 1, mbs):
            mb = data.take(perm[lo:lo + mbs])
            total, grads, (pl, vl, ent) = combined_loss(policy, mb, config)
            if not np.isfinite(total):
                raise NumericError(f"non-finite PPO loss (policy {pl}, value {vl}, entropy {ent})")
            policy, adam = adam_step(policy, grads, adam)
            policy.log_std = np.clip(policy.log_std, LOG_STD_MIN, LOG_STD_MAX)
            stats.policy_loss += pl
            stats.value_loss += vl
            stats.entropy += ent
            stats.n_updates += 1
    if stats.n_updates:
        for k in ("policy_loss", "value_loss", "entropy"):
            setattr(stats, k, getattr(stats, k) / stats.n_updates)
    new_logp = policy.log_prob(data.states, data.actions)
    log_ratio = new_logp - data.old_logp
    stats.approx_kl = float(np.mean(np.exp(log_ratio) - 1.0 - log_ratio))
    stats.clip_fraction = float(np.mean(np.abs(np.exp(log_ratio) - 1.0) > config.clip))
    return policy, adam, stats
