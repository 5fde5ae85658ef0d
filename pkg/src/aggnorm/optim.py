"""Adam optimizer with bias correction, plus global-norm gradient clipping.

Only parameters that actually received a gradient in the current step are
updated: moments for untouched parameters stay frozen, which is what keeps
the inactive task's weights bitwise unchanged during alternating training.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .tensor import Parameter


class AdamState:
    """Per-parameter first/second moment estimates and step counter."""

    __slots__ = ("m", "v", "t")

    def __init__(self, shape, dtype):
        self.m = np.zeros(shape, dtype=dtype)
        self.v = np.zeros(shape, dtype=dtype)
        self.t = 0


class Adam:
    def __init__(self, params, lr=5e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params: list[Parameter] = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = {id(p): AdamState(p.data.shape, p.data.dtype) for p in self.params}

    def step(self):
        for p in self.params:
            if p.grad is None:
                continue
            if p.grad.shape != p.data.shape:
                raise ShapeError(
                    f"gradient shape {p.grad.shape} != parameter shape {p.data.shape}"
                    f" for {p.name}"
                )
            st = self.state[id(p)]
            st.t += 1
            st.m = self.beta1 * st.m + (1.0 - self.beta1) * p.grad
            st.v = self.beta2 * st.v + (1.0 - self.beta2) * (p.grad * p.grad)
            m_hat = st.m / (1.0 - self.beta1**st.t)
            v_hat = st.v / (1.0 - self.beta2**st.t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state_for(self, p: Parameter) -> AdamState:
        return self.state[id(p)]


def clip_global_norm(params, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most `max_norm`.

    Returns the pre-clipping norm.
    """
    total = 0.0
    grads = [p.grad for p in params if p.grad is not None]
    for g in grads:
        total += float((g * g).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0.0:
        factor = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * factor
    return norm
