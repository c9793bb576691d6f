"""Transition-distance encoder.

An MLP ``phi`` is trained so that ``||phi(s_i) - phi(s_j)||`` grows with the
number of transitions separating ``s_i`` and ``s_j`` inside a trajectory.
For an anchor at index ``t`` the positives are the next ``step`` states and
the negatives the ``step`` states after those; positives are pulled in and
negatives pushed beyond a unit margin.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import spearmanr

from .numcore import AdamState, MlpParams, adam_step, forward_with_cache, init_mlp, mlp_backward, mlp_forward


@dataclass(frozen=True)
class TdrpConfig:
    step: int = 50
    embed_dim: int = 16
    hidden: tuple[int, ...] = (64, 64)
    margin: float = 1.0
    batch_anchors: int = 64
    train_steps: int = 200
    pairs: int = 4
    lr: float = 1e-3
    # share of anchors drawn from pinned (demonstration) trajectories when any are given
    demo_fraction: float = 0.0

    def __post_init__(self) -> None:
        if self.step < 1:
            raise ValueError("step must be >= 1")
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.embed_dim < 1:
            raise ValueError("embedding dimension must be >= 1")
        if not 0.0 <= self.demo_fraction <= 1.0:
            raise ValueError("demo_fraction must lie in [0, 1]")
        if self.batch_anchors < 1 or self.pairs < 1 or self.train_steps < 0:
            raise ValueError("batch_anchors and pairs must be >= 1, train_steps >= 0")


@dataclass
class Encoder:
    params: MlpParams
    config: TdrpConfig
    rounds: int = 0
    adam: AdamState | None = None

    @classmethod
    def create(cls, state_dim: int, config: TdrpConfig, rng: np.random.Generator) -> "Encoder":
        sizes = [state_dim, *config.hidden, config.embed_dim]
        # distances ignore a shared offset, so the output layer carries no bias
        params = init_mlp(sizes, rng, hidden="tanh", output="identity", output_bias=False)
        return cls(params, config, 0, AdamState.for_params(params, lr=config.lr))

    def snapshot(self) -> "Encoder":
        """Frozen copy for reward computation; later training does not affect it."""
        return Encoder(self.params.copy(), self.config, self.rounds, None)


@dataclass
class ContrastBatch:
    anchors: np.ndarray     # (B, d)
    positives: np.ndarray   # (B, P, d)
    negatives: np.ndarray   # (B, N, d)


@dataclass
class TrainStats:
    losses: list[float] = field(default_factory=list)

    @property
    def initial(self) -> float:
        return self.losses[0] if self.losses else float("nan")

    @property
    def final(self) -> float:
        return self.losses[-1] if self.losses else float("nan")


def contrast_indices(length: int, t: int, step: int) -> tuple[range, range]:
    """Index ranges of the positive and negative sets for anchor ``t``."""
    if not 0 <= t < length:
        raise IndexError(f"anchor {t} outside trajectory of length {length}")
    if step < 1:
        raise ValueError("step must be >= 1")
    last = length - 1
    pos = range(t + 1, min(t + step, last) + 1)
    neg = range(t + step + 1, min(t + 2 * step, last) + 1)
    return pos, neg


def build_contrast_sets(trajectory: Sequence[np.ndarray], t: int, step: int):
    """Positive and negative state lists for anchor ``t``."""
    pos, neg = contrast_indices(len(trajectory), t, step)
    return [trajectory[i] for i in pos], [trajectory[i] for i in neg]


def valid_anchors(lengths: Sequence[int], step: int) -> np.ndarray:
    """``(trajectory, t)`` pairs whose negative set is non-empty."""
    out = []
    for k, n in enumerate(lengths):
        # negatives need index t + step + 1 <= n - 1
        for t in range(max(0, n - step - 1)):
            out.append((k, t))
    return np.array(out, dtype=np.int64).reshape(-1, 2)


def _pair_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum((a - b) ** 2, axis=-1))


def triplet_loss(anchor_emb, pos_embs, neg_embs, margin: float = 1.0) -> float:
    """Sum of positive distances plus hinged negative distances."""
    a = np.asarray(anchor_emb, dtype=np.float64)
    p = np.asarray(pos_embs, dtype=np.float64)
    n = np.asarray(neg_embs, dtype=np.float64)
    if p.size == 0 or n.size == 0:
        raise ValueError("positive and negative sets must be non-empty")
    p = p.reshape(-1, a.shape[-1]) if p.ndim == 1 else p
    n = n.reshape(-1, a.shape[-1]) if n.ndim == 1 else n
    if p.shape[-1] != a.shape[-1] or n.shape[-1] != a.shape[-1]:
        raise ValueError("embedding dimensions disagree")
    return float(_pair_dist(a, p).sum() + np.maximum(margin - _pair_dist(a, n), 0.0).sum())


def batch_triplet_loss(params: MlpParams, batch: ContrastBatch, margin: float = 1.0):
    """Mean over anchors of the triplet loss, with its analytic gradient."""
    B, P, d = batch.positives.shape
    N = batch.negatives.shape[1]
    x = np.concatenate([batch.anchors, batch.positives.reshape(B * P, d),
                        batch.negatives.reshape(B * N, d)])
    emb, cache = forward_with_cache(params, x)
    e = emb.shape[1]
    ea = emb[:B]
    ep = emb[B:B + B * P].reshape(B, P, e)
    en = emb[B + B * P:].reshape(B, N, e)

    dp_vec = ea[:, None, :] - ep
    dn_vec = ea[:, None, :] - en
    dp = np.sqrt(np.sum(dp_vec ** 2, axis=-1))
    dn = np.sqrt(np.sum(dn_vec ** 2, axis=-1))
    hinge = margin - dn
    value = float((dp.sum() + np.maximum(hinge, 0.0).sum()) / B)

    # d||v||/dv = v/||v||, taken as 0 at v = 0
    up = np.divide(dp_vec, dp[..., None], out=np.zeros_like(dp_vec), where=dp[..., None] > 0)
    active = (hinge > 0) & (dn > 0)
    un = np.divide(dn_vec, dn[..., None], out=np.zeros_like(dn_vec), where=dn[..., None] > 0)
    un = -un * active[..., None]
    g_ea = (up.sum(axis=1) + un.sum(axis=1)) / B
    g_ep = -up / B
    g_en = -un / B
    d_emb = np.concatenate([g_ea, g_ep.reshape(B * P, e), g_en.reshape(B * N, e)])
    return value, mlp_backward(params, cache, d_emb)


class _FlatBuffer:
    """Trajectories concatenated into one array for vectorized sampling."""

    def __init__(self, trajectories: Sequence[np.ndarray], step: int, n_pinned: int = 0):
        trajs = [np.asarray(t, dtype=np.float64) for t in trajectories]
        self.states = np.concatenate(trajs) if trajs else np.zeros((0, 0))
        lengths = np.array([len(t) for t in trajs], dtype=np.int64)
        starts = np.concatenate([[0], np.cumsum(lengths)[:-1]]) if len(trajs) else lengths
        anchors = valid_anchors(lengths, step)
        self.n_anchors = len(anchors)
        # anchors come out grouped by trajectory, so pinned ones form a prefix
        self.n_lead = int(np.sum(anchors[:, 0] < n_pinned)) if self.n_anchors else 0
        if self.n_anchors:
            k, t = anchors[:, 0], anchors[:, 1]
            self.anchor_row = starts[k] + t
            last = lengths[k] - 1
            self.n_pos = np.minimum(step, last - t)
            self.n_neg = np.minimum(2 * step, last - t) - step


def sample_batch(flat: _FlatBuffer, config: TdrpConfig, rng: np.random.Generator) -> ContrastBatch:
    """Uniform anchors, then ``pairs`` positives and negatives drawn uniformly per anchor.

    When the buffer has both pinned and ordinary anchors, a ``demo_fraction``
    share of the batch is drawn uniformly from the pinned ones instead.
    """
    pick = rng.integers(0, flat.n_anchors, size=config.batch_anchors)
    if config.demo_fraction > 0 and 0 < flat.n_lead < flat.n_anchors:
        lead = rng.random(config.batch_anchors) < config.demo_fraction
        pick = np.where(lead, rng.integers(0, flat.n_lead, size=config.batch_anchors),
                        flat.n_lead + rng.integers(0, flat.n_anchors - flat.n_lead, size=config.batch_anchors))
    rows = flat.anchor_row[pick][:, None]
    shape = (config.batch_anchors, config.pairs)
    pos = rows + 1 + np.floor(rng.random(shape) * flat.n_pos[pick][:, None]).astype(np.int64)
    neg = rows + config.step + 1 + np.floor(rng.random(shape) * flat.n_neg[pick][:, None]).astype(np.int64)
    S = flat.states
    return ContrastBatch(S[rows[:, 0]], S[pos], S[neg])


def train_encoder(encoder: Encoder, buffer: Sequence[np.ndarray], rng: np.random.Generator,
                  steps: int | None = None, n_pinned: int = 0) -> tuple[Encoder, TrainStats]:
    """One training round of ``config.train_steps`` Adam updates on the buffer.

    ``buffer`` holds trajectories as ``(length, state_dim)`` arrays; the first
    ``n_pinned`` of them are demonstrations (see ``TdrpConfig.demo_fraction``).
    """
    cfg = encoder.config
    steps = cfg.train_steps if steps is None else steps
    stats = TrainStats()
    if steps == 0:
        return encoder, stats
    flat = _FlatBuffer(buffer, cfg.step, n_pinned)
    if flat.n_anchors == 0:
        raise ValueError(f"no trajectory in the buffer is longer than step + 1 = {cfg.step + 1}")
    params = encoder.params
    adam = encoder.adam or AdamState.for_params(params, lr=cfg.lr)
    for _ in range(steps):
        batch = sample_batch(flat, cfg, rng)
        loss, g = batch_triplet_loss(params, batch, cfg.margin)
        stats.losses.append(loss)
        params, adam = adam_step(params, g, adam)
    return Encoder(params, cfg, encoder.rounds + 1, adam), stats


def encode(encoder: Encoder, states) -> np.ndarray:
    return mlp_forward(encoder.params, states)


def embedding_distance(encoder: Encoder, s1, s2) -> float:
    return float(np.linalg.norm(encode(encoder, s1) - encode(encoder, s2)))


def within_trajectory_pairs(trajectories: Sequence[np.ndarray], values: Sequence[np.ndarray]):
    """Pairwise distances of ``values`` and timestep gaps over all i<j in each trajectory."""
    dists, gaps = [], []
    for traj, val in zip(trajectories, values):
        n = len(traj)
        i, j = np.triu_indices(n, k=1)
        dists.append(_pair_dist(val[i], val[j]))
        gaps.append(j - i)
    return np.concatenate(dists), np.concatenate(gaps)


def distance_rank_correlation(encoder: Encoder | None, trajectories: Sequence[np.ndarray]) -> float:
    """Spearman correlation between distance and timestep gap.

    With ``encoder=None`` distances are taken in the raw state space.
    """
    trajs = [np.asarray(t, dtype=np.float64) for t in trajectories]
    vals = trajs if encoder is None else [encode(encoder, t) for t in trajs]
    d, g = within_trajectory_pairs(trajs, vals)
    return float(spearmanr(d, g).statistic)


def export_embeddings(path, encoder: Encoder, trajectories: Sequence[np.ndarray]) -> None:
    """CSV with columns trajectory_id, t, emb_0 .. emb_{d-1}."""
    d = encoder.config.embed_dim
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trajectory_id", "t"] + [f"emb_{i}" for i in range(d)])
        for k, traj in enumerate(trajectories):
            emb = encode(encoder, np.asarray(traj, dtype=np.float64))
            for t, row in enumerate(emb):
                w.writerow([k, t] + [repr(float(v)) for v in row])
