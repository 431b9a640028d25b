"""Adam with per-parameter first/second moments, float32 throughout."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class AdamState:
    """Moment buffers plus the shared step counter."""

    def __init__(self):
        self.step = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def ensure(self, name: str, shape) -> None:
        if name not in self.m:
            self.m[name] = np.zeros(shape, dtype=np.float32)
            self.v[name] = np.zeros(shape, dtype=np.float32)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: AdamState, lr: float = 1e-4, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One in-place Adam update over every parameter that received a gradient.

    Parameters without an entry in ``grads`` are left untouched (their
    moments do not decay either; frozen parameters simply stay out of the
    optimizer). A NaN or Inf gradient aborts the whole step.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter '{name}'")
        if params[name].data.shape != g.shape:
            raise ValueError(
                f"gradient shape {g.shape} does not match parameter '{name}' "
                f"shape {params[name].data.shape}")
    state.step += 1
    t = state.step
    # python-float coefficients: full-precision scalars, float32 array math
    c1 = 1.0 - beta1
    c2 = 1.0 - beta2
    bias1 = 1.0 - beta1 ** t
    bias2 = 1.0 - beta2 ** t
    for name, g in grads.items():
        p = params[name]
        state.ensure(name, p.data.shape)
        m = state.m[name]
        v = state.v[name]
        m += c1 * (g - m)
        v += c2 * (g * g - v)
        m_hat = m / bias1
        v_hat = v / bias2
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
