"""Sketched weight gradients with balanced count-sketch and invariant norm scalars."""

from basis.tensor import ContractError

__version__ = "0.1.0"

__all__ = ["ContractError", "__version__"]
