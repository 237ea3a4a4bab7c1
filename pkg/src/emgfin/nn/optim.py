"""Adam with L2 weight decay folded into the gradient."""

from __future__ import annotations

import numpy as np

from .params import Param


def adam_step(
    params,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 2e-5,
) -> None:
    """One bias-corrected Adam update over a collection of Param.

    Weight decay is added to the gradient before the moment updates
    (classic L2 coupled into Adam). Each Param keeps its own step count.
    """
    for p in params:
        g = p.grad
        if weight_decay != 0.0:
            g = g + weight_decay * p.value
        p.step_count += 1
        t = p.step_count
        p.adam_m *= beta1
        p.adam_m += (1.0 - beta1) * g
        p.adam_v *= beta2
        p.adam_v += (1.0 - beta2) * (g * g)
        m_hat = p.adam_m / (1.0 - beta1**t)
        v_hat = p.adam_v / (1.0 - beta2**t)
        p.value -= lr * m_hat / (np.sqrt(v_hat) + eps)


def zero_grads(params) -> None:
    for p in params:
        p.zero_grad()
