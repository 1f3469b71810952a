"""Adam with bias correction, defaults (beta1, beta2) = (0.5, 0.999)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

AE_LEARNING_RATE = 1e-3
LDE_LEARNING_RATE = 2e-4


@dataclass
class AdamState:
    alpha: float
    beta1: float = 0.5
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_init(params: dict[str, np.ndarray], alpha: float, beta1: float = 0.5,
              beta2: float = 0.999, epsilon: float = 1e-8) -> AdamState:
    if not alpha > 0:
        raise ValueError(f"learning rate must be positive, got {alpha}")
    if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
        raise ValueError(f"decay rates must lie in [0, 1), got ({beta1}, {beta2})")
    return AdamState(
        alpha=alpha, beta1=beta1, beta2=beta2, epsilon=epsilon,
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
    )


def adam_step(state: AdamState, params: dict[str, np.ndarray],
              grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Update ``params`` in place and return them.

    Parameters without an entry in ``grads`` are left untouched and their
    moments do not decay.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.alpha * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return params
