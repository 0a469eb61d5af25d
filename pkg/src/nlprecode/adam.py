"""Adam optimizer over a dict of named numpy parameters."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError


@dataclass
class AdamState:
    lr: float = 1e-3
    b1: float = 0.9
    b2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """Apply one bias-corrected Adam update to ``params`` in place.

    Every parameter must have a gradient of the same shape. Returns
    ``(params, state)`` for convenience.
    """
    for name, p in params.items():
        if name not in grads:
            raise ContractError(f"missing gradient for parameter {name!r}")
        if grads[name].shape != p.shape:
            raise DimensionError(f"gradient shape {grads[name].shape} != parameter shape {p.shape} for {name!r}")
    state.t += 1
    c1 = 1.0 - state.b1**state.t
    c2 = 1.0 - state.b2**state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= state.b1
        m += (1.0 - state.b1) * g
        v *= state.b2
        v += (1.0 - state.b2) * (g * g)
        step = (state.lr / c1) * m / (np.sqrt(v / c2) + state.eps)
        p -= step.astype(p.dtype, copy=False)
    return params, state
