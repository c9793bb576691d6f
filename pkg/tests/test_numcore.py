import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tdrp.numcore import (AdamState, MlpParams, NumericError, adam_step, finite_diff_check,
                          forward_with_cache, init_mlp, mlp_backward, mlp_forward, param_count)


def _sq_loss(params, batch):
    x, y = batch
    out, cache = forward_with_cache(params, x)
    err = out - y
    return float(np.sum(err ** 2)), mlp_backward(params, cache, 2.0 * err)


def test_param_count_matches_arrays(rng):
    p = init_mlp([5, 7, 3], rng)
    assert param_count([5, 7, 3]) == sum(a.size for a in p.arrays()) == 5 * 7 + 7 + 7 * 3 + 3


def test_forward_matches_manual_composition(rng):
    p = init_mlp([3, 4, 2], rng, hidden="tanh", output="identity")
    x = rng.normal(size=(6, 3))
    manual = np.tanh(x @ p.weights[0].T + p.biases[0]) @ p.weights[1].T + p.biases[1]
    np.testing.assert_allclose(mlp_forward(p, x), manual, rtol=0, atol=1e-14)


def test_single_vector_and_batch_agree(rng):
    p = init_mlp([3, 5, 2], rng)
    x = rng.normal(size=(4, 3))
    np.testing.assert_allclose(np.array([mlp_forward(p, r) for r in x]), mlp_forward(p, x), atol=1e-14)


@pytest.mark.parametrize("hidden", ["tanh", "relu"])
@pytest.mark.parametrize("output", ["identity", "tanh"])
def test_backward_matches_finite_differences(rng, hidden, output):
    p = init_mlp([3, 6, 5, 2], rng, hidden=hidden, output=output)
    batch = (rng.normal(size=(8, 3)), rng.normal(size=(8, 2)))
    assert finite_diff_check(_sq_loss, p, batch) < 1e-5


def test_bad_dimensions_rejected(rng):
    with pytest.raises(ValueError):
        MlpParams([np.zeros((4, 3)), np.zeros((2, 5))], [np.zeros(4), np.zeros(2)])
    p = init_mlp([3, 2], rng)
    with pytest.raises(ValueError):
        mlp_forward(p, np.zeros(4))


def test_non_finite_input_raises(rng):
    p = init_mlp([2, 2], rng)
    with pytest.raises(NumericError):
        mlp_forward(p, np.array([np.nan, 0.0]))


def test_adam_first_step_moves_by_lr(rng):
    # after one bias-corrected step every entry moves by lr * sign(g) (up to eps)
    p = init_mlp([2, 3], rng)
    g = p.with_arrays([rng.normal(size=a.shape) for a in p.arrays()])
    state = AdamState.for_params(p, lr=0.01)
    new, state = adam_step(p, g, state)
    for a0, a1, ga in zip(p.arrays(), new.arrays(), g.arrays()):
        np.testing.assert_allclose(a1 - a0, -0.01 * np.sign(ga), rtol=1e-6)
    assert state.step == 1


def test_adam_matches_reference_sequence():
    # scalar reference implementation of the textbook update
    w = np.array([[0.5]])
    p = MlpParams([w.copy()], [np.zeros(1)])
    state = AdamState.for_params(p, lr=0.1)
    m = v = 0.0
    ref = 0.5
    for t in range(1, 6):
        gval = 2.0 * ref
        m = 0.9 * m + 0.1 * gval
        v = 0.999 * v + 0.001 * gval ** 2
        ref -= 0.1 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        g = MlpParams([np.array([[2.0 * p.weights[0][0, 0]]])], [np.array([1e-3])])
        p, state = adam_step(p, g, state)
        assert p.weights[0][0, 0] == pytest.approx(ref, rel=1e-12)


def test_adam_holds_zero_gradient_entries(rng):
    p = init_mlp([2, 2], rng)
    g = p.zeros_like()
    g.weights[0][0, 0] = 1.0
    new, _ = adam_step(p, g, AdamState.for_params(p, lr=0.1))
    changed = new.weights[0] != p.weights[0]
    assert changed[0, 0] and changed.sum() == 1
    np.testing.assert_array_equal(new.biases[0], p.biases[0])


def test_adam_rejects_structure_mismatch(rng):
    p = init_mlp([2, 2], rng)
    q = init_mlp([2, 3], rng)
    with pytest.raises(ValueError):
        adam_step(p, q, AdamState.for_params(p))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 6), st.integers(1, 3), st.integers(0, 10_000))
def test_gradient_shapes_follow_params(n_in, n_hidden, n_out, seed):
    r = np.random.default_rng(seed)
    p = init_mlp([n_in, n_hidden, n_out], r)
    x = r.normal(size=(3, n_in))
    _, g = _sq_loss(p, (x, np.zeros((3, n_out))))
    assert [a.shape for a in g.arrays()] == [a.shape for a in p.arrays()]


def test_copy_is_independent(rng):
    p = init_mlp([2, 2], rng)
    q = p.copy()
    q.weights[0][0, 0] += 1.0
    assert p.weights[0][0, 0] != q.weights[0][0, 0]


def test_pinned_output_bias_is_not_a_parameter(rng):
    p = init_mlp([3, 4, 2], rng, output_bias=False)
    assert len(p.arrays()) == 3
    q = p.with_arrays([a + 1.0 for a in p.arrays()])
    np.testing.assert_array_equal(q.biases[-1], np.zeros(2))
    _, cache = forward_with_cache(p, rng.normal(size=(5, 3)))
    g = mlp_backward(p, cache, np.ones((5, 2)))
    assert len(g.arrays()) == 3 and not np.any(g.biases[-1])
    with pytest.raises(ValueError):
        MlpParams(p.weights, [p.biases[0], np.ones(2)], output_bias=False)
