import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tdrp.numcore import finite_diff_check
from tdrp.representation import (ContrastBatch, Encoder, TdrpConfig, _FlatBuffer, batch_triplet_loss,
                                 build_contrast_sets, contrast_indices, distance_rank_correlation, encode,
                                 export_embeddings, sample_batch, train_encoder, triplet_loss,
                                 valid_anchors, within_trajectory_pairs)


def _oracle_sets(length, t, step):
    idx = list(range(length))
    return [i for i in idx if t < i <= t + step], [i for i in idx if t + step < i <= t + 2 * step]


def test_contrast_sets_match_index_oracle():
    r = np.random.default_rng(0)
    for _ in range(1000):
        length = int(r.integers(1, 120))
        t = int(r.integers(0, length))
        step = int(r.integers(1, 40))
        pos, neg = contrast_indices(length, t, step)
        assert (list(pos), list(neg)) == _oracle_sets(length, t, step)


def test_contrast_set_examples():
    assert [list(x) for x in contrast_indices(100, 10, 5)] == [[11, 12, 13, 14, 15], [16, 17, 18, 19, 20]]
    # near the end both sets are truncated
    assert [list(x) for x in contrast_indices(20, 15, 5)] == [[16, 17, 18, 19], []]


def test_contrast_indices_reject_bad_anchor():
    with pytest.raises(IndexError):
        contrast_indices(10, 10, 2)
    with pytest.raises(ValueError):
        contrast_indices(10, 0, 0)


def test_build_contrast_sets_returns_states():
    traj = [np.array([float(i)]) for i in range(10)]
    pos, neg = build_contrast_sets(traj, 2, 3)
    assert [p[0] for p in pos] == [3.0, 4.0, 5.0] and [n[0] for n in neg] == [6.0, 7.0, 8.0]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(1, 40), min_size=1, max_size=5), st.integers(1, 12))
def test_valid_anchors_are_exactly_those_with_negatives(lengths, step):
    got = {tuple(a) for a in valid_anchors(lengths, step)}
    want = {(k, t) for k, n in enumerate(lengths) for t in range(n) if contrast_indices(n, t, step)[1]}
    assert got == want


def test_triplet_loss_hand_example():
    a = np.zeros(2)
    pos = np.array([[3.0, 4.0]])              # distance 5
    neg = np.array([[0.6, 0.0], [2.0, 0.0]])  # hinge 0.4 and 0
    assert triplet_loss(a, pos, neg, margin=1.0) == pytest.approx(5.4)


def test_triplet_loss_zero_when_positives_coincide_and_negatives_beyond_margin():
    a = np.array([1.0, 1.0])
    assert triplet_loss(a, [a, a], [[5.0, 5.0]]) == 0.0


def test_triplet_loss_rejects_empty_sets():
    with pytest.raises(ValueError):
        triplet_loss(np.zeros(2), np.zeros((0, 2)), np.ones((1, 2)))


def _batch(r, B=5, P=3, N=3, d=4):
    return ContrastBatch(r.normal(size=(B, d)), r.normal(size=(B, P, d)), r.normal(size=(B, N, d)))


def test_batch_loss_is_mean_of_per_anchor_losses(rng):
    enc = Encoder.create(4, TdrpConfig(embed_dim=3, hidden=(8,)), rng)
    b = _batch(rng)
    value, _ = batch_triplet_loss(enc.params, b, 1.0)
    per = [triplet_loss(encode(enc, b.anchors[i]), encode(enc, b.positives[i]), encode(enc, b.negatives[i]))
           for i in range(len(b.anchors))]
    assert value == pytest.approx(np.mean(per), rel=1e-12)


def test_batch_loss_gradient_matches_finite_differences(rng):
    enc = Encoder.create(4, TdrpConfig(embed_dim=3, hidden=(6,)), rng)
    b = _batch(rng)
    err = finite_diff_check(lambda p, bb: batch_triplet_loss(p, bb, 1.0), enc.params, b)
    assert err < 1e-4


def test_training_reduces_loss_and_snapshot_is_frozen(rng):
    trajs = [np.column_stack([np.linspace(0, 1, 30), rng.normal(size=(30, 2))]) for _ in range(10)]
    cfg = TdrpConfig(step=4, embed_dim=4, hidden=(16,), train_steps=150)
    enc = Encoder.create(3, cfg, rng)
    snap = enc.snapshot()
    trained, stats = train_encoder(enc, trajs, rng)
    assert np.mean(stats.losses[-20:]) < np.mean(stats.losses[:20])
    assert trained.rounds == 1
    np.testing.assert_array_equal(snap.params.weights[0], enc.params.weights[0])
    assert distance_rank_correlation(trained, trajs) > distance_rank_correlation(None, trajs)


def test_training_rejects_short_buffer(rng):
    enc = Encoder.create(1, TdrpConfig(step=5), rng)
    with pytest.raises(ValueError):
        train_encoder(enc, [np.zeros((6, 1))], rng, 3)


def test_same_seed_same_encoder():
    trajs = [np.arange(40.0).reshape(20, 2)]
    runs = []
    for _ in range(2):
        r = np.random.default_rng(5)
        enc = Encoder.create(2, TdrpConfig(step=3, hidden=(8,), embed_dim=2), r)
        runs.append(train_encoder(enc, trajs, r, 10)[0].params.weights[0])
    np.testing.assert_array_equal(runs[0], runs[1])


def test_demo_fraction_one_draws_only_pinned_anchors(rng):
    pinned = [np.full((12, 1), -1.0)]
    others = [np.full((12, 1), 1.0) for _ in range(5)]
    cfg = TdrpConfig(step=2, demo_fraction=1.0, batch_anchors=256)
    flat = _FlatBuffer(pinned + others, cfg.step, n_pinned=1)
    batch = sample_batch(flat, cfg, rng)
    assert np.all(batch.anchors == -1.0)
    mixed = sample_batch(flat, TdrpConfig(step=2, demo_fraction=0.5, batch_anchors=4000), rng)
    assert np.mean(mixed.anchors == -1.0) == pytest.approx(0.5, abs=0.03)


def test_positives_and_negatives_respect_windows(rng):
    traj = np.arange(30.0)[:, None]
    cfg = TdrpConfig(step=4, batch_anchors=500, pairs=4)
    b = sample_batch(_FlatBuffer([traj], cfg.step), cfg, rng)
    gap_p = b.positives[..., 0] - b.anchors[:, None, 0]
    gap_n = b.negatives[..., 0] - b.anchors[:, None, 0]
    assert gap_p.min() >= 1 and gap_p.max() <= 4
    assert gap_n.min() >= 5 and gap_n.max() <= 8


def test_within_trajectory_pairs_counts():
    trajs = [np.zeros((4, 1)), np.zeros((3, 1))]
    d, g = within_trajectory_pairs(trajs, trajs)
    assert len(d) == 6 + 3 and sorted(g.tolist()) == [1, 1, 1, 1, 1, 2, 2, 2, 3]


def test_raw_rank_correlation_perfect_on_a_line():
    traj = np.column_stack([np.arange(10.0), np.zeros(10)])
    assert distance_rank_correlation(None, [traj]) == pytest.approx(1.0)


def test_export_embeddings_schema(tmp_path, rng):
    enc = Encoder.create(2, TdrpConfig(embed_dim=3, hidden=(4,)), rng)
    path = tmp_path / "emb.csv"
    export_embeddings(path, enc, [np.zeros((3, 2)), np.ones((2, 2))])
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["trajectory_id", "t", "emb_0", "emb_1", "emb_2"]
    assert [r[:2] for r in rows[1:]] == [["0", "0"], ["0", "1"], ["0", "2"], ["1", "0"], ["1", "1"]]


@pytest.mark.parametrize("bad", [dict(step=0), dict(margin=0.0), dict(embed_dim=0), dict(demo_fraction=1.5)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        TdrpConfig(**bad)
