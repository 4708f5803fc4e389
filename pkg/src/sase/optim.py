"""ADAM optimizer over named parameter dicts."""

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError


@dataclass
class AdamState:
    """Moment buffers and step counter for ADAM.

    beta1/beta2/eps are the optimizer's canonical constants; ``lr`` may be
    reassigned between steps by a schedule.
    """

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """One bias-corrected ADAM update, applied to ``params`` in place.

    ``params`` maps name -> Tensor, ``grads`` maps name -> ndarray. Names
    missing from ``grads`` (parameters untouched by the loss) are skipped.
    Raises NumericalError naming the parameter if a gradient is not finite.
    """
    if state.lr <= 0:
        raise ValueError(f"learning rate must be positive, got {state.lr}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.data.shape} for {name!r}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name!r} at step {t}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        update = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.data = p.data - update
    return params, state
