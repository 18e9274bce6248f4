"""Dense layers with analytic gradients and an Adam optimizer.

Everything here is a pure function of its arguments. Parameters are plain
``dict[str, np.ndarray]`` objects (insertion ordered), named
``layer{i}.weight`` with shape ``(in_dim, out_dim)`` and ``layer{i}.bias``
with shape ``(out_dim,)``. Activations are batch-first, row-major float64.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import DimensionError, ValidationError

ModelParams = dict[str, np.ndarray]

ACTIVATIONS = ("tanh", "leaky_relu", "sigmoid", "identity")


@dataclass(frozen=True)
class DenseLayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "identity"
    slope: float = 0.2  # leaky_relu only

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValidationError(f"layer dims must be positive, got {self.in_dim}x{self.out_dim}")
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")
        if self.activation == "leaky_relu" and not 0.0 < self.slope < 1.0:
            raise ValidationError(f"leaky_relu slope must lie in (0, 1), got {self.slope}")


def mlp_spec(sizes: Sequence[int], hidden: str = "leaky_relu", output: str = "identity",
             slope: float = 0.2) -> list[DenseLayerSpec]:
    """Layer specs for a plain multilayer perceptron ``sizes[0] -> ... -> sizes[-1]``."""
    n = len(sizes) - 1
    return [
        DenseLayerSpec(sizes[i], sizes[i + 1], output if i == n - 1 else hidden, slope)
        for i in range(n)
    ]


def weight_name(i: int) -> str:
    return f"layer{i}.weight"


def bias_name(i: int) -> str:
    return f"layer{i}.bias"


def init_params(spec: Sequence[DenseLayerSpec], seed: int) -> ModelParams:
    """Glorot-uniform weights, zero biases; bit-identical for a given seed."""
    rng = np.random.default_rng(seed)
    params: ModelParams = {}
    for i, layer in enumerate(spec):
        limit = init_scale(layer) * np.sqrt(3.0)
        params[weight_name(i)] = rng.uniform(-limit, limit, size=(layer.in_dim, layer.out_dim))
        params[bias_name(i)] = np.zeros(layer.out_dim)
    return params


def init_scale(layer: DenseLayerSpec) -> float:
    """Standard deviation of the Glorot-uniform draw for ``layer``."""
    return float(np.sqrt(2.0 / (layer.in_dim + layer.out_dim)))


def check_compatible(a: ModelParams, b: ModelParams) -> None:
    """Raise DimensionError unless names and shapes match elementwise."""
    if list(a) != list(b):
        raise DimensionError(f"parameter names differ: {list(a)} vs {list(b)}")
    for name in a:
        if a[name].shape != b[name].shape:
            raise DimensionError(f"{name}: shape {a[name].shape} vs {b[name].shape}")


def _check_layer(params: ModelParams, i: int, layer: DenseLayerSpec, width: int) -> None:
    if width != layer.in_dim:
        raise DimensionError(f"layer {i}: input width {width} != in_dim {layer.in_dim}")
    w = params.get(weight_name(i))
    b = params.get(bias_name(i))
    if w is None or b is None:
        raise DimensionError(f"layer {i}: missing weight or bias")
    if w.shape != (layer.in_dim, layer.out_dim) or b.shape != (layer.out_dim,):
        raise DimensionError(
            f"layer {i}: weight {w.shape} / bias {b.shape} do not match "
            f"({layer.in_dim}, {layer.out_dim})"
        )


def _activate(pre: np.ndarray, layer: DenseLayerSpec) -> np.ndarray:
    act = layer.activation
    if act == "tanh":
        return np.tanh(pre)
    if act == "sigmoid":
        # split by sign so exp never overflows
        out = np.empty_like(pre)
        pos = pre >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-pre[pos]))
        e = np.exp(pre[~pos])
        out[~pos] = e / (1.0 + e)
        return out
    if act == "leaky_relu":
        return np.where(pre > 0, pre, layer.slope * pre)
    return pre


def _activation_grad(pre: np.ndarray, out: np.ndarray, layer: DenseLayerSpec) -> np.ndarray:
    act = layer.activation
    if act == "tanh":
        return 1.0 - out * out
    if act == "sigmoid":
        return out * (1.0 - out)
    if act == "leaky_relu":
        return np.where(pre > 0, 1.0, layer.slope)
    return np.ones_like(pre)


def _require_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite values in {what}")


def _as_batch(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise DimensionError(f"expected a (batch, features) array, got shape {x.shape}")
    return x


def _trace(params: ModelParams, spec: Sequence[DenseLayerSpec], x: np.ndarray):
    """Forward pass keeping (input, pre-activation, output) for every layer."""
    _require_finite(x, "network input")
    trace = []
    h = x
    for i, layer in enumerate(spec):
        _check_layer(params, i, layer, h.shape[1])
        pre = h @ params[weight_name(i)]
        pre += params[bias_name(i)]
        out = _activate(pre, layer)
        trace.append((h, pre, out))
        h = out
    # non-finite values survive every activation, so checking the end suffices
    _require_finite(h, "network output")
    return trace


def forward_trace(params: ModelParams, spec: Sequence[DenseLayerSpec], x):
    """``forward`` plus the per-layer trace that :func:`backward` can reuse."""
    x = _as_batch(x)
    if not spec:
        return x.copy(), []
    trace = _trace(params, spec, x)
    return trace[-1][2], trace


def forward(params: ModelParams, spec: Sequence[DenseLayerSpec], x) -> np.ndarray:
    return forward_trace(params, spec, x)[0]


def backward(params: ModelParams, spec: Sequence[DenseLayerSpec], x,
             upstream_grad, trace=None,
             at_preactivation: bool = False) -> tuple[ModelParams, np.ndarray]:
    """Gradients of ``sum(upstream_grad * forward(params, spec, x))``.

    Returns ``(param_grads, input_grad)``; param_grads has the same names
    and shapes as ``params``. ``trace`` from :func:`forward_trace` on the
    same arguments skips the recomputation. With ``at_preactivation`` the
    upstream gradient is taken w.r.t. the last layer's pre-activation
    instead of its output, which keeps sigmoid cross-entropy gradients
    exact when the sigmoid saturates.
    """
    x = _as_batch(x)
    if trace is None:
        trace = _trace(params, spec, x) if spec else []
    g = _as_batch(upstream_grad)
    out_shape = trace[-1][2].shape if trace else x.shape
    if g.shape != out_shape:
        raise DimensionError(f"upstream grad shape {g.shape} != output shape {out_shape}")
    _require_finite(g, "upstream gradient")

    grads: ModelParams = {}
    for i in range(len(spec) - 1, -1, -1):
        h, pre, out = trace[i]
        if not (at_preactivation and i == len(spec) - 1):
            g = g * _activation_grad(pre, out, spec[i])
        grads[weight_name(i)] = h.T @ g
        grads[bias_name(i)] = g.sum(axis=0)
        g = g @ params[weight_name(i)].T
    ordered = {name: grads[name] for name in params if name in grads}
    return ordered, g


@dataclass
class AdamState:
    first_moment: ModelParams
    second_moment: ModelParams
    step_count: int = 0
    learning_rate: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(cls, params: ModelParams, learning_rate: float = 2e-4, beta1: float = 0.9,
              beta2: float = 0.999, epsilon: float = 1e-8) -> "AdamState":
        zeros = {k: np.zeros_like(v) for k, v in params.items()}
        return cls(zeros, {k: v.copy() for k, v in zeros.items()}, 0,
                   learning_rate, beta1, beta2, epsilon)


def adam_step(params: ModelParams, grads: ModelParams,
              state: AdamState) -> tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update; inputs are left untouched."""
    check_compatible(params, grads)
    check_compatible(params, state.first_moment)
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    step = state.learning_rate / c1
    root_c2 = np.sqrt(c2)
    new_params, m_new, v_new = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        m = g * (1.0 - b1)
        m += b1 * state.first_moment[name]
        v = g * g
        v *= 1.0 - b2
        v += b2 * state.second_moment[name]
        # lr * (m / c1) / (sqrt(v / c2) + eps)
        denom = np.sqrt(v)
        denom /= root_c2
        denom += state.epsilon
        upd = np.divide(m, denom, out=denom)
        upd *= step
        new_params[name] = p - upd
        m_new[name] = m
        v_new[name] = v
    return new_params, replace(state, first_moment=m_new, second_moment=v_new, step_count=t)


def copy_params(params: ModelParams) -> ModelParams:
    return {k: v.copy() for k, v in params.items()}


def flatten(params: ModelParams) -> np.ndarray:
    return np.concatenate([v.ravel() for v in params.values()])
