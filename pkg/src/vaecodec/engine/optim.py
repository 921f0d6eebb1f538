"""Adam with bias correction, acting in place on :class:`Parameter` objects."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .tensor import Parameter


def adam_step(params: Iterable[Parameter], lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Apply one Adam update to every parameter.

    Gradients are left untouched; callers reset them before the next pass.
    """
    params = list(params)
    if lr <= 0 or eps <= 0:
        raise ValueError(f"lr and eps must be positive, got lr={lr}, eps={eps}")
    missing = [p.name or repr(p) for p in params if p.grad is None]
    if missing:
        raise ValueError(f"missing gradient for parameters: {', '.join(missing)}")

    for p in params:
        g = p.grad.astype(p.data.dtype, copy=False)
        p.step_count += 1
        t = p.step_count
        p.adam_m *= beta1
        p.adam_m += (1.0 - beta1) * g
        p.adam_v *= beta2
        p.adam_v += (1.0 - beta2) * (g * g)
        m_hat = p.adam_m / (1.0 - beta1 ** t)
        v_hat = p.adam_v / (1.0 - beta2 ** t)
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype, copy=False)


def zero_grad(params: Iterable[Parameter]) -> None:
    for p in params:
        p.grad = None
