"""SGD with classical (heavy-ball) momentum.

``v <- beta * v + g`` then ``p <- p - lr * v``. The gradient is not
pre-scaled by ``lr`` or ``1 - beta``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class MomentumState:
    learning_rate: float = 0.01
    beta: float = 0.9
    velocity: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.beta}")


def sgd_momentum_step(params: dict, grads: dict, state: MomentumState):
    """Update ``params`` in place and return ``(params, state)``.

    Parameters without a gradient entry are left untouched. Shapes are
    checked and every gradient must be finite before anything is written.
    """
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}")
    for name, g in grads.items():
        v = state.velocity.get(name)
        if v is None:
            v = state.velocity[name] = np.zeros_like(params[name])
        v *= state.beta
        v += g
        params[name] -= state.learning_rate * v
    return params, state
