"""Adam parameter updates with bias correction.

The update for each parameter ``p`` with gradient ``g`` is::

    m <- b1*m + (1-b1)*g          v <- b2*v + (1-b2)*g^2
    m_hat = m / (1 - b1^t)        v_hat = v / (1 - b2^t)
    p <- p - lr * m_hat / (sqrt(v_hat) + eps)

with defaults b1=0.9, b2=0.999, eps=1e-8.  The step counter is shared by
all parameters and increments once per :func:`adam_step` call.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["NumericalError", "AdamState", "adam_step"]


class NumericalError(RuntimeError):
    """Raised when an optimization step encounters non-finite values."""


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def _param_names(params):
    return params.names() if hasattr(params, "names") else list(params.keys())


def adam_step(params, grads, state: AdamState, lr: float) -> AdamState:
    """Apply one bias-corrected Adam update in place.

    ``params`` is a dict-like of name -> ndarray (a ``ParamStore`` works);
    ``grads`` maps the same names to gradients.  A non-finite gradient
    aborts the step before touching any parameter.
    """
    names = _param_names(params)
    for name in names:
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name in names:
        p = params[name]
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p)
            state.m[name] = m
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        params[name] = p - lr * update
    return state
