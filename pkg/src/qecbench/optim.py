"""Adam optimizer for :mod:`qecbench.tensor` parameters."""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ShapeError


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros(np.shape(p)) for p in params], [np.zeros(np.shape(p)) for p in params])


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``.

    ``params`` and ``grads`` are lists of arrays; inputs are left untouched.
    """
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ShapeError("params, grads and optimizer state have different lengths")
    t = state.step + 1
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        p, g = np.asarray(p, np.float64), np.asarray(g, np.float64)
        if not (p.shape == g.shape == m.shape == v.shape):
            raise ShapeError(
                f"shape mismatch: param {p.shape}, grad {g.shape}, state {m.shape}/{v.shape}"
            )
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        new_params.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(new_m, new_v, t)


@dataclass
class Adam:
    """Stateful wrapper updating :class:`~qecbench.tensor.Tensor` parameters in place."""

    params: list
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    state: AdamState = field(init=False)

    def __post_init__(self):
        self.state = AdamState.zeros_like([p.data for p in self.params])

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        grads = [np.zeros(p.shape) if p.grad is None else p.grad for p in self.params]
        new, self.state = adam_step(
            [p.data for p in self.params], grads, self.state, self.lr, self.beta1, self.beta2, self.eps
        )
        for p, data in zip(self.params, new):
            p.data = data
