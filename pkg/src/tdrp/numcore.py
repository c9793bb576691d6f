"""Dense feed-forward networks with hand-written backprop, Adam, and a
finite-difference gradient checker.

Parameters are plain float64 numpy arrays. Anything exposing ``arrays()``
and ``with_arrays(list)`` can be optimized with :func:`adam_step` and checked
with :func:`finite_diff_check`, so the PPO policy (two networks plus a
log-std vector) goes through the same machinery as the encoder.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

ACTIVATIONS = ("tanh", "relu", "identity")


class NumericError(FloatingPointError):
    """Raised when a public operation would produce NaN or Inf."""


def _check_finite(x: np.ndarray, what: str) -> None:
    # a single reduction: any NaN or Inf makes the sum non-finite
    if not np.isfinite(np.sum(x)):
        raise NumericError(f"non-finite values in {what}")


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "identity":
        return z
    raise ValueError(f"unknown activation {name!r}")


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    # derivative expressed through the pre-activation z and output a
    if name == "tanh":
        return 1.0 - a * a
    if name == "relu":
        return (z > 0.0).astype(z.dtype)
    if name == "identity":
        return np.ones_like(z)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class MlpParams:
    """Weights ``(out, in)`` and biases ``(out,)`` for each affine layer."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden: str = "tanh"
    output: str = "identity"
    # False pins the last bias at zero and leaves it out of arrays(); used when
    # the loss only sees differences of outputs, so that bias has no gradient
    output_bias: bool = True

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {i}: weight {w.shape} / bias {b.shape} disagree")
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i} input {w.shape[1]} != previous output "
                                 f"{self.weights[i - 1].shape[0]}")
        if self.hidden not in ACTIVATIONS or self.output not in ACTIVATIONS:
            raise ValueError("unknown activation tag")
        if not self.output_bias and np.any(self.biases[-1]):
            raise ValueError("output bias is pinned at zero but holds non-zero values")

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out if self.output_bias else out[:-1]

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "MlpParams":
        arrays = list(arrays)
        if len(arrays) != 2 * len(self.weights) - (not self.output_bias):
            raise ValueError("array count does not match layer count")
        if not self.output_bias:
            arrays.append(np.zeros(self.weights[-1].shape[0]))
        return MlpParams(arrays[0::2], arrays[1::2], self.hidden, self.output, self.output_bias)

    def copy(self) -> "MlpParams":
        return self.with_arrays([a.copy() for a in self.arrays()])

    def zeros_like(self) -> "MlpParams":
        return self.with_arrays([np.zeros_like(a) for a in self.arrays()])

    def scaled(self, factor: float) -> "MlpParams":
        return self.with_arrays([a * factor for a in self.arrays()])


def param_count(sizes: Sequence[int]) -> int:
    return sum(sizes[i + 1] * (sizes[i] + 1) for i in range(len(sizes) - 1))


def init_mlp(sizes: Sequence[int], rng: np.random.Generator, hidden: str = "tanh",
             output: str = "identity", output_scale: float = 1.0, output_bias: bool = True) -> MlpParams:
    """Glorot-uniform weights, zero biases.

    ``output_scale`` shrinks the last layer, which PPO uses to start the
    policy mean near zero.
    """
    if len(sizes) < 2 or any(int(s) < 1 for s in sizes):
        raise ValueError(f"bad layer sizes {sizes}")
    weights, biases = [], []
    for i in range(len(sizes) - 1):
        fan_in, fan_out = int(sizes[i]), int(sizes[i + 1])
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-lim, lim, size=(fan_out, fan_in))
        if i == len(sizes) - 2:
            w = w * output_scale
        weights.append(w)
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases, hidden, output, output_bias)


@dataclass
class ForwardCache:
    inputs: list[np.ndarray] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)
    post: list[np.ndarray] = field(default_factory=list)


def forward_with_cache(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != params.in_dim:
        raise ValueError(f"input shape {x.shape} does not match network input {params.in_dim}")
    _check_finite(x, "network input")
    cache = ForwardCache()
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        cache.inputs.append(h)
        z = h @ w.T + b
        a = _act(params.output if i == last else params.hidden, z)
        cache.pre.append(z)
        cache.post.append(a)
        h = a
    _check_finite(h, "network output")
    return h, cache


def mlp_forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Evaluate the network on one input vector or a batch of rows."""
    return forward_with_cache(params, x)[0]


def mlp_backward(params: MlpParams, cache: ForwardCache, d_out: np.ndarray) -> MlpParams:
    """Gradient of a scalar loss w.r.t. parameters given dL/d(output)."""
    d = np.asarray(d_out, dtype=np.float64)
    last = len(params.weights) - 1
    gw: list[np.ndarray] = [None] * len(params.weights)  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * len(params.weights)  # type: ignore[list-item]
    for i in range(last, -1, -1):
        act = params.output if i == last else params.hidden
        dz = d * _act_grad(act, cache.pre[i], cache.post[i])
        h = cache.inputs[i]
        if dz.ndim == 1:
            gw[i] = np.outer(dz, h)
            gb[i] = dz.copy()
        else:
            gw[i] = dz.T @ h
            gb[i] = dz.sum(axis=0)
        if i > 0:
            d = dz @ params.weights[i]
    if not params.output_bias:
        gb[last] = np.zeros_like(gb[last])
    grads = MlpParams(gw, gb, params.hidden, params.output, params.output_bias)
    if not np.isfinite(sum(float(np.sum(a)) for a in grads.arrays())):
        raise NumericError("non-finite values in gradient")
    return grads


# A differentiable loss takes (params, batch) and returns (value, gradient)
# where gradient has the same structure as params.
Loss = Callable[[object, object], tuple[float, object]]


def grad(loss: Loss, params, batch):
    """Analytic gradient of ``loss`` at ``params``."""
    _, g = loss(params, batch)
    return g


def finite_diff_check(loss: Loss, params, batch, h: float = 1e-5) -> float:
    """Max relative error between the analytic gradient and central differences."""
    if h <= 0:
        raise ValueError("h must be positive")
    analytic = grad(loss, params, batch).arrays()
    base = [a.copy() for a in params.arrays()]
    worst = 0.0
    for k, arr in enumerate(base):
        for idx in np.ndindex(arr.shape):
            plus = [a.copy() for a in base]
            minus = [a.copy() for a in base]
            plus[k][idx] += h
            minus[k][idx] -= h
            fp, _ = loss(params.with_arrays(plus), batch)
            fm, _ = loss(params.with_arrays(minus), batch)
            numeric = (fp - fm) / (2.0 * h)
            err = abs(analytic[k][idx] - numeric) / (abs(numeric) + 1e-8)
            worst = max(worst, err)
    return worst


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, lr: float = 1e-4, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        arrays = params.arrays()
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays],
                   0, lr, beta1, beta2, eps)


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update. Returns new ``(params, state)``."""
    p_arr, g_arr = params.arrays(), grads.arrays()
    if len(p_arr) != len(g_arr) or len(p_arr) != len(state.m):
        raise ValueError("parameter / gradient / state structure mismatch")
    for p, g, m in zip(p_arr, g_arr, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch {p.shape} / {g.shape} / {m.shape}")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_m = [b1 * m + (1.0 - b1) * g for m, g in zip(state.m, g_arr)]
    new_v = [b2 * v + (1.0 - b2) * g * g for v, g in zip(state.v, g_arr)]
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    # entries with an exactly-zero gradient are held fixed; their moments still decay
    new_p = [np.where(g != 0.0, p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps), p)
             for p, g, m, v in zip(p_arr, g_arr, new_m, new_v)]
    for p in new_p:
        _check_finite(p, "parameters after Adam step")
    new_state = AdamState(new_m, new_v, t, state.lr, b1, b2, state.eps)
    return params.with_arrays(new_p), new_state
