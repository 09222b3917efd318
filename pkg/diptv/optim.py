from collections import OrderedDict
from dataclasses import dataclass, field, replace

import numpy as np


@dataclass(frozen=True)
class AdamState:
    """
    Moments of Adam for a named set of parameters. m and v are created zero
    on the first step that sees a parameter.
    """

    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"Learning rate must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError(f"Betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if self.eps <= 0:
            raise ValueError(f"Adam eps must be positive, got {self.eps}")


def _raw(x):
    return np.asarray(getattr(x, "data", x))


def adam_step(state, params, grads):
    """
    One bias-corrected Adam update.

    :param state: AdamState
    :param params: mapping name -> array or Tensor
    :param grads: mapping name -> array or Tensor, same keys as params
    :return: (new state, OrderedDict name -> updated array)
    """
    missing = [name for name in params if name not in grads]
    if missing:
        raise ValueError(f"Missing gradients for {missing}")

    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    m, v = dict(state.m), dict(state.v)
    updated = OrderedDict()
    for name, value in params.items():
        theta = _raw(value)
        g = _raw(grads[name]).astype(theta.dtype, copy=False)
        m_prev = m.get(name, np.zeros_like(theta))
        v_prev = v.get(name, np.zeros_like(theta))
        m[name] = b1 * m_prev + (1 - b1) * g
        v[name] = b2 * v_prev + (1 - b2) * g * g
        m_hat = m[name] / (1 - b1 ** t)
        v_hat = v[name] / (1 - b2 ** t)
        updated[name] = theta - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return replace(state, t=t, m=m, v=v), updated
