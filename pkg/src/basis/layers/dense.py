"""Dense layer, exact and sketched.

Both variants compute the same forward output and the same input gradient.
They differ only in what the forward pass keeps for the weight gradient:
the exact layer keeps the whole ``B x N`` input, the sketched layer keeps
an ``R x N`` scaled sketch plus the plan that produced it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from basis.sketch import (
    DEFAULT_EPSILON,
    SketchedTensor,
    SketchPlan,
    apply_sketch,
    build_plan,
    invariant_scale,
    unscaled,
)
from basis.tensor import ContractError, frobenius_norm, matmul, transpose


@dataclass
class DenseParams:
    weight: np.ndarray
    bias: Optional[np.ndarray] = None

    @property
    def shape(self):
        return self.weight.shape


@dataclass
class ExactCache:
    x: np.ndarray
    params: DenseParams

    @property
    def cached_floats(self) -> int:
        return int(self.x.size)


@dataclass
class BasisCache:
    x_hat: SketchedTensor
    plan: SketchPlan
    lam: float
    params: DenseParams
    scaled: bool = True

    @property
    def cached_floats(self) -> int:
        return self.x_hat.cached_floats

    @property
    def index_ints(self) -> int:
        return 2 * self.plan.batch_card


def _affine(x: np.ndarray, params: DenseParams) -> np.ndarray:
    if x.ndim != 2 or x.shape[1] != params.weight.shape[0]:
        raise ContractError(f"dense input {x.shape} incompatible with weight {params.weight.shape}")
    y = matmul(x, params.weight)
    if params.bias is not None:
        y = y + params.bias[None, :]
    return y


def _bias_grad(dy: np.ndarray, params: DenseParams):
    return dy.sum(axis=0) if params.bias is not None else None


def dense_forward_exact(x: np.ndarray, params: DenseParams):
    return _affine(x, params), ExactCache(x, params)


def dense_backward_exact(dy: np.ndarray, cache: ExactCache):
    params = cache.params
    if dy.ndim != 2 or dy.shape != (cache.x.shape[0], params.weight.shape[1]):
        raise ContractError(
            f"upstream gradient {dy.shape} does not match output shape "
            f"{(cache.x.shape[0], params.weight.shape[1])}"
        )
    dx = matmul(dy, transpose(params.weight))
    dw = matmul(transpose(cache.x), dy)
    return dx, dw, _bias_grad(dy, params)


def basis_dense_forward(
    x: np.ndarray,
    params: DenseParams,
    rank: int,
    lam: float = 0.0,
    seed: int = 0,
    epsilon: float = DEFAULT_EPSILON,
    *,
    scaled: bool = True,
):
    """Exact output; caches a rank-``min(rank, B)`` sketch of ``x`` instead of ``x``.

    ``scaled=False`` skips the norm correction (gamma fixed at 1) and exists
    only so diagnostics can look at the raw estimator.
    """
    if not 0.0 <= lam < 1.0:
        raise ContractError(f"shrinkage must lie in [0, 1), got {lam}")
    y = _affine(x, params)
    plan = build_plan(x.shape[0], rank, seed)
    scale = invariant_scale if scaled else unscaled
    x_hat = scale(frobenius_norm(x), apply_sketch(x, plan), epsilon)
    return y, BasisCache(x_hat, plan, lam, params, scaled)


def basis_dense_backward(dy: np.ndarray, cache: BasisCache):
    params = cache.params
    if dy.ndim != 2 or dy.shape[1] != params.weight.shape[1]:
        raise ContractError(f"upstream gradient {dy.shape} incompatible with weight {params.weight.shape}")
    if dy.shape[0] != cache.plan.batch_card:
        raise ContractError(
            f"upstream gradient has {dy.shape[0]} rows but the cached plan covers {cache.plan.batch_card}"
        )
    dx = matmul(dy, transpose(params.weight))
    scale = invariant_scale if cache.scaled else unscaled
    dy_hat = scale(frobenius_norm(dy), apply_sketch(dy, cache.plan), cache.x_hat.epsilon).values
    x_hat = cache.x_hat.values
    if cache.lam > 0.0:
        x_hat = x_hat * (1.0 - cache.lam)
        dy_hat = dy_hat * (1.0 - cache.lam)
    dw_hat = matmul(transpose(x_hat), dy_hat)
    return dx, dw_hat, _bias_grad(dy, params)


class Dense:
    """A named dense projection that runs in ``exact`` or ``basis`` mode."""

    def __init__(self, name: str, params: DenseParams, mode: str = "exact", rank: int = 1,
                 lam: float = 0.0, epsilon: float = DEFAULT_EPSILON):
        if mode not in ("exact", "basis"):
            raise ContractError(f"layer {name}: unknown mode {mode!r}")
        self.name = name
        self.params = params
        self.mode = mode
        self.rank = rank
        self.lam = lam
        self.epsilon = epsilon

    @property
    def in_features(self) -> int:
        return self.params.weight.shape[0]

    def __call__(self, x: np.ndarray, seed: int = 0):
        if self.mode == "basis":
            return basis_dense_forward(x, self.params, self.rank, self.lam, seed, self.epsilon)
        return dense_forward_exact(x, self.params)

    def infer(self, x: np.ndarray) -> np.ndarray:
        return _affine(x, self.params)

    @staticmethod
    def backward(dy: np.ndarray, cache):
        if isinstance(cache, BasisCache):
            return basis_dense_backward(dy, cache)
        return dense_backward_exact(dy, cache)
