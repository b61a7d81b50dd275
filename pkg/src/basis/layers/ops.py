"""Elementwise and normalization layers with hand-written backward passes."""

from __future__ import annotations

import math

import numpy as np

from basis.tensor import ContractError

LAYERNORM_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dy, mask):
    return dy * mask


def gelu_forward(x):
    # tanh approximation, as in GPT-2
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x**3))), x


def gelu_backward(dy, x):
    u = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(u)
    du = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def layernorm_forward(x, scale, shift, eps: float = LAYERNORM_EPS):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xn = xc * inv
    return xn * scale + shift, (xn, inv, scale)


def layernorm_backward(dy, cache):
    """Returns ``(dx, dscale, dshift)`` for row-wise layer normalization."""
    xn, inv, scale = cache
    lead = tuple(range(dy.ndim - 1))
    dshift = dy.sum(axis=lead)
    dscale = (dy * xn).sum(axis=lead)
    g = dy * scale
    dx = inv * (g - g.mean(axis=-1, keepdims=True) - xn * (g * xn).mean(axis=-1, keepdims=True))
    return dx, dscale, dshift


def embedding_forward(ids, table):
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractError(f"token id out of range for table with {table.shape[0]} rows")
    return table[ids], ids


def embedding_backward(dy, ids, n_rows: int):
    grad = np.zeros((n_rows, dy.shape[-1]), dtype=dy.dtype)
    np.add.at(grad, ids.reshape(-1), dy.reshape(-1, dy.shape[-1]))
    return grad


def softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits, targets):
    """Mean negative log-likelihood over rows and its gradient."""
    targets = np.asarray(targets).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != targets.shape[0]:
        raise ContractError(f"logits {logits.shape} do not match {targets.shape[0]} targets")
    B = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(B)
    loss = float(np.mean(logsum - z[rows, targets]))
    dlogits = np.exp(z - logsum[:, None])
    dlogits[rows, targets] -= 1.0
    dlogits /= B
    return loss, dlogits


def mse_loss(pred, target):
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size
