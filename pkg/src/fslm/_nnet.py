"""Minimal feed-forward network machinery shared by the density and validity models.

Parameters live in a flat list ``[W1, b1, ..., Wh, bh, W_head, b_head]`` with
tanh on every hidden layer and a linear head.  The backward pass consumes the
gradient of a scalar loss with respect to the head output and returns
gradients in the same list layout, which keeps finite-difference checking of
the whole stack straightforward.
"""

from __future__ import annotations

import numpy as np


def init_mlp(
    input_dim: int,
    hidden_sizes: tuple[int, ...],
    head_dim: int,
    rng: np.random.Generator,
    head_weight_scale: float = 1e-2,
) -> list[np.ndarray]:
    """Glorot-initialized hidden layers plus a deliberately small linear head.

    A near-zero head makes the initial output easy to reason about (biases
    dominate), which downstream models exploit to start from a sane density.
    """
    params: list[np.ndarray] = []
    fan_in = input_dim
    for width in hidden_sizes:
        bound = np.sqrt(6.0 / (fan_in + width))
        params.append(rng.uniform(-bound, bound, size=(width, fan_in)))
        params.append(np.zeros(width))
        fan_in = width
    bound = np.sqrt(6.0 / (fan_in + head_dim))
    params.append(head_weight_scale * rng.uniform(-bound, bound, size=(head_dim, fan_in)))
    params.append(np.zeros(head_dim))
    return params


def mlp_forward(
    params: list[np.ndarray], x: np.ndarray
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Forward pass; returns head output (B, head_dim) and activation caches."""
    a = np.asarray(x, dtype=np.float64)
    caches = [a]
    n_hidden = (len(params) - 2) // 2
    for layer in range(n_hidden):
        w, b = params[2 * layer], params[2 * layer + 1]
        a = np.tanh(a @ w.T + b)
        caches.append(a)
    w, b = params[-2], params[-1]
    return a @ w.T + b, caches


def mlp_backward(
    params: list[np.ndarray], caches: list[np.ndarray], d_out: np.ndarray
) -> list[np.ndarray]:
    """Backpropagate ``d_out`` (gradient w.r.t. head output) through the stack."""
    grads: list[np.ndarray] = [np.empty(0)] * len(params)
    w_head = params[-2]
    grads[-2] = d_out.T @ caches[-1]
    grads[-1] = d_out.sum(axis=0)
    da = d_out @ w_head
    n_hidden = (len(params) - 2) // 2
    for layer in range(n_hidden - 1, -1, -1):
        a = caches[layer + 1]
        dz = da * (1.0 - a * a)
        grads[2 * layer] = dz.T @ caches[layer]
        grads[2 * layer + 1] = dz.sum(axis=0)
        da = dz @ params[2 * layer]
    return grads


def flatten_params(params: list[np.ndarray]) -> tuple[np.ndarray, list[tuple[int, ...]]]:
    shapes = [p.shape for p in params]
    return np.concatenate([p.ravel() for p in params]), shapes


def unflatten_params(vec: np.ndarray, shapes: list[tuple[int, ...]]) -> list[np.ndarray]:
    out = []
    offset = 0
    for shape in shapes:
        size = int(np.prod(shape)) if shape else 1
        out.append(vec[offset : offset + size].reshape(shape).copy())
        offset += size
    if offset != vec.size:
        raise ValueError("parameter vector length does not match shapes")
    return out


class Adam:
    """Standard Adam on a flat parameter vector."""

    def __init__(
        self,
        n_params: int,
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, params_flat: np.ndarray, grad_flat: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad_flat
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad_flat**2
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return params_flat - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)
