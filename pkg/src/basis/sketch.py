"""Balanced count-sketch construction and invariant norm scaling.

A :class:`SketchPlan` realizes the random ``R x B`` projection ``S`` with
``S[r, b] = signs[b] * (bins[b] == r)`` without ever materializing it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from basis import seeding
from basis.tensor import ContractError, frobenius_norm, signed_segment_sum

DEFAULT_EPSILON = 1e-8

_BINS_KEY = 0
_SIGNS_KEY = 1


@dataclass(frozen=True)
class SketchPlan:
    batch_card: int
    rank: int
    bins: np.ndarray
    signs: np.ndarray
    seed: int

    def __post_init__(self):
        self.bins.setflags(write=False)
        self.signs.setflags(write=False)

    def matrix(self) -> np.ndarray:
        """Dense ``S``. Only for tests and diagnostics."""
        S = np.zeros((self.rank, self.batch_card))
        S[self.bins, np.arange(self.batch_card)] = self.signs
        return S


@dataclass(frozen=True)
class SketchedTensor:
    values: np.ndarray
    gamma: float
    source_norm: float
    epsilon: float

    @property
    def cached_floats(self) -> int:
        return int(self.values.size)


def _generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return seeding.rng(seed)


def balanced_assignment(batch_card: int, rank: int, seed) -> np.ndarray:
    """Random permutation of ``arange(B) % R``.

    Every bin ends up with ``floor(B/R)`` or ``ceil(B/R)`` members, and the
    partition of rows into bins is uniformly random among balanced ones.
    ``seed`` is an integer or a ``numpy.random.Generator``.
    """
    if batch_card < 1 or rank < 1:
        raise ContractError(f"batch_card and rank must be positive, got {batch_card}, {rank}")
    return _generator(seed).permutation(np.arange(batch_card) % rank)


def uniform_assignment(batch_card: int, rank: int, seed) -> np.ndarray:
    # Control arm for the variance comparison: i.i.d. uniform bins, so bin
    # occupancy is multinomial. Never used for training.
    if batch_card < 1 or rank < 1:
        raise ContractError(f"batch_card and rank must be positive, got {batch_card}, {rank}")
    return _generator(seed).integers(0, rank, size=batch_card)


def rademacher_signs(batch_card: int, seed) -> np.ndarray:
    if batch_card < 1:
        raise ContractError(f"batch_card must be positive, got {batch_card}")
    return _generator(seed).integers(0, 2, size=batch_card) * 2 - 1


def build_plan(batch_card: int, rank: int, seed: int, hashing: str = "balanced") -> SketchPlan:
    """Plan with ``rank`` clamped to ``min(rank, batch_card)``.

    Bins and signs come from independent streams derived from ``seed``.
    ``hashing="uniform"`` selects the i.i.d. control assignment.
    """
    if batch_card < 1 or rank < 1:
        raise ContractError(f"batch_card and rank must be positive, got {batch_card}, {rank}")
    r_safe = min(rank, batch_card)
    bin_rng = seeding.rng(seed, _BINS_KEY)
    if hashing == "balanced":
        bins = balanced_assignment(batch_card, r_safe, bin_rng)
    elif hashing == "uniform":
        bins = uniform_assignment(batch_card, r_safe, bin_rng)
    else:
        raise ContractError(f"unknown hashing mode {hashing!r}")
    signs = rademacher_signs(batch_card, seeding.rng(seed, _SIGNS_KEY))
    return SketchPlan(batch_card, r_safe, bins, signs, int(seed))


def apply_sketch(x: np.ndarray, plan: SketchPlan) -> np.ndarray:
    if x.ndim != 2 or x.shape[0] != plan.batch_card:
        raise ContractError(
            f"sketch expects {plan.batch_card} rows, got matrix of shape {x.shape}"
        )
    return signed_segment_sum(x, plan.bins, plan.signs, plan.rank)


def invariant_scale(x_norm: float, raw_sketch: np.ndarray, epsilon: float = DEFAULT_EPSILON) -> SketchedTensor:
    """Rescale ``raw_sketch`` so its norm tracks the source norm ``x_norm``.

    ``gamma = x_norm / (||raw_sketch|| + epsilon)``. A zero source gives
    ``gamma = 0`` and a zero sketch.
    """
    if not epsilon > 0:
        raise ContractError(f"epsilon must be positive, got {epsilon}")
    if x_norm == 0:
        return SketchedTensor(np.zeros_like(raw_sketch), 0.0, 0.0, epsilon)
    gamma = x_norm / (frobenius_norm(raw_sketch) + epsilon)
    return SketchedTensor(gamma * raw_sketch, float(gamma), float(x_norm), epsilon)


def unscaled(x_norm: float, raw_sketch: np.ndarray, epsilon: float = DEFAULT_EPSILON) -> SketchedTensor:
    """Wrap a raw sketch with ``gamma = 1``; diagnostics only."""
    return SketchedTensor(raw_sketch, 1.0, float(x_norm), epsilon)
