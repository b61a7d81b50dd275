"""Multi-head causal self-attention on flattened ``(batch*T, d)`` rows.

The four projections are :class:`~basis.layers.dense.Dense` layers, so each
one independently runs exact or sketched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from basis.layers.dense import Dense
from basis.layers.ops import softmax
from basis.tensor import ContractError


@dataclass
class AttentionCache:
    caches: dict
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    att: np.ndarray


class CausalSelfAttention:
    def __init__(self, q: Dense, k: Dense, v: Dense, out: Dense, n_heads: int):
        d = q.params.weight.shape[1]
        if d % n_heads:
            raise ContractError(f"width {d} not divisible by {n_heads} heads")
        self.q, self.k, self.v, self.out = q, k, v, out
        self.n_heads = n_heads

    @property
    def projections(self):
        return (self.q, self.k, self.v, self.out)

    def _split(self, z, batch, T):
        # (batch*T, d) -> (batch, heads, T, d_head)
        return z.reshape(batch, T, self.n_heads, -1).transpose(0, 2, 1, 3)

    def _merge(self, z):
        batch, _, T, _ = z.shape
        return z.transpose(0, 2, 1, 3).reshape(batch * T, -1)

    def _mix(self, q, k, v, T):
        scores = q @ k.transpose(0, 1, 3, 2) / math.sqrt(q.shape[-1])
        mask = np.triu(np.ones((T, T), dtype=bool), k=1)
        scores = np.where(mask, -np.inf, scores)
        att = softmax(scores, axis=-1)
        return att @ v, att

    def __call__(self, x, batch: int, T: int, seeds=(0, 0, 0, 0)):
        caches = {}
        heads = []
        for layer, seed in zip((self.q, self.k, self.v), seeds[:3]):
            z, caches[layer.name] = layer(x, seed)
            heads.append(self._split(z, batch, T))
        q, k, v = heads
        mixed, att = self._mix(q, k, v, T)
        y, caches[self.out.name] = self.out(self._merge(mixed), seeds[3])
        return y, AttentionCache(caches, q, k, v, att)

    def infer(self, x, batch: int, T: int):
        q, k, v = (self._split(p.infer(x), batch, T) for p in (self.q, self.k, self.v))
        mixed, _ = self._mix(q, k, v, T)
        return self.out.infer(self._merge(mixed))

    def backward(self, dy, cache: AttentionCache, grads: dict):
        """Backpropagates ``dy``; weight gradients land in ``grads`` keyed by layer name."""
        q, k, v, att = cache.q, cache.k, cache.v, cache.att
        batch, _, T, _ = q.shape
        dmixed, grads[self.out.name + ".weight"], db = Dense.backward(dy, cache.caches[self.out.name])
        grads[self.out.name + ".bias"] = db
        dmixed = self._split(dmixed, batch, T)
        datt = dmixed @ v.transpose(0, 1, 3, 2)
        dv = att.transpose(0, 1, 3, 2) @ dmixed
        dscores = att * (datt - (datt * att).sum(axis=-1, keepdims=True))
        dscores /= math.sqrt(q.shape[-1])
        dq = dscores @ k
        dk = dscores.transpose(0, 1, 3, 2) @ q
        dx = None
        for layer, dz in zip((self.q, self.k, self.v), (dq, dk, dv)):
            dxi, grads[layer.name + ".weight"], grads[layer.name + ".bias"] = Dense.backward(
                self._merge(dz), cache.caches[layer.name]
            )
            dx = dxi if dx is None else dx + dxi
        return dx
