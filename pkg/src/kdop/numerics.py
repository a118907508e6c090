"""Dense numeric helpers: shape-checked products, activations, init and Adam.

Matrices are plain float64 numpy arrays. Everything here is deterministic
given a seeded generator from :func:`make_rng`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DomainError

DTYPE = np.float64


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; the bit stream is identical across platforms."""
    return np.random.Generator(np.random.PCG64(int(seed) % 2**64))


def matmul(a, b):
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def softmax(x, axis: int = -1):
    x = np.asarray(x, dtype=DTYPE)
    if x.size == 0 or x.shape[axis] == 0:
        raise DomainError("softmax of an empty vector")
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def relu(x):
    return np.maximum(x, 0.0)


def relu_grad(x):
    # relu'(0) is taken as 0
    return (np.asarray(x) > 0).astype(DTYPE)


def sigmoid(x):
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(DTYPE)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else out[()]


def sigmoid_grad(x):
    s = sigmoid(x)
    return s * (1.0 - s)


def tanh(x):
    return np.tanh(x)


def tanh_grad(x):
    t = np.tanh(x)
    return 1.0 - t * t


ACTIVATIONS = {
    "tanh": (tanh, tanh_grad),
    "relu": (relu, relu_grad),
    "sigmoid": (sigmoid, sigmoid_grad),
}


def glorot_init(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Uniform Glorot draw on +-sqrt(6 / (rows + cols))."""
    if rows < 1 or cols < 1:
        raise DomainError(f"glorot_init needs positive shape, got ({rows}, {cols})")
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols)).astype(DTYPE)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def like(cls, param, **kw) -> "AdamState":
        return cls(np.zeros_like(param, dtype=DTYPE), np.zeros_like(param, dtype=DTYPE), **kw)


def adam_step(state: AdamState, param, grad):
    """Return ``(new_param, state)`` after one bias-corrected Adam update.

    ``state`` is updated in place and also returned.
    """
    param = np.asarray(param, dtype=DTYPE)
    grad = np.asarray(grad, dtype=DTYPE)
    if param.shape != grad.shape or state.m.shape != param.shape:
        raise DimensionError(
            f"adam shapes differ: param {param.shape}, grad {grad.shape}, state {state.m.shape}"
        )
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    return param - state.lr * m_hat / (np.sqrt(v_hat) + state.eps), state


@dataclass
class Adam:
    """Adam over a dict of named parameter arrays."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    states: dict = field(default_factory=dict)

    def update(self, params: dict, grads: dict) -> None:
        for name in sorted(params):
            st = self.states.get(name)
            if st is None:
                st = AdamState.like(params[name], lr=self.lr, beta1=self.beta1,
                                    beta2=self.beta2, eps=self.eps)
                self.states[name] = st
            params[name], _ = adam_step(st, params[name], grads[name])
