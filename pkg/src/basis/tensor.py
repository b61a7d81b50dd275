"""Dense matrix primitives.

Matrices are 2-D numpy arrays in C (row-major) order, float64 unless the
caller opts into float32. Nothing here broadcasts: every shape coercion is
explicit and mismatches raise :class:`ContractError`.
"""

from __future__ import annotations

import numpy as np

DEFAULT_DTYPE = np.float64


class ContractError(ValueError):
    """A precondition on shapes or index ranges was violated."""


def as_matrix(a, dtype=None) -> np.ndarray:
    m = np.ascontiguousarray(a, dtype=dtype or DEFAULT_DTYPE)
    if m.ndim != 2:
        raise ContractError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def _check2d(name: str, a: np.ndarray) -> None:
    if a.ndim != 2:
        raise ContractError(f"{name} must be 2-D, got shape {a.shape}")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check2d("a", a)
    _check2d("b", b)
    if a.shape[1] != b.shape[0]:
        raise ContractError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def transpose(a: np.ndarray) -> np.ndarray:
    _check2d("a", a)
    return np.ascontiguousarray(a.T)


def frobenius_norm(a: np.ndarray) -> float:
    # sqrt of the plain sum of squares; np.linalg.norm rescales, which can
    # differ in the last bit and we compare norms for exact equality.
    return float(np.sqrt(np.sum(a * a)))


def signed_segment_sum(x: np.ndarray, bins: np.ndarray, signs: np.ndarray, r_bins: int) -> np.ndarray:
    """Row ``r`` of the result is ``sum(signs[b] * x[b] for b with bins[b] == r)``.

    Bins that receive no rows come back as zero rows.
    """
    _check2d("x", x)
    bins = np.asarray(bins)
    signs = np.asarray(signs)
    B = x.shape[0]
    if r_bins < 1:
        raise ContractError(f"r_bins must be positive, got {r_bins}")
    if bins.shape != (B,) or signs.shape != (B,):
        raise ContractError(
            f"bins {bins.shape} and signs {signs.shape} must both have length {B}"
        )
    if B and (bins.min() < 0 or bins.max() >= r_bins):
        raise ContractError(f"bin index out of range [0, {r_bins}): min {bins.min()}, max {bins.max()}")
    if not np.all(np.abs(signs) == 1):
        raise ContractError("signs must be +1 or -1")
    out = np.zeros((r_bins, x.shape[1]), dtype=x.dtype)
    np.add.at(out, bins, signs.astype(x.dtype)[:, None] * x)
    return out
