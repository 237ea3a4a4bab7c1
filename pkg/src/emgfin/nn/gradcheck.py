"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

import numpy as np


class GradCheckError(RuntimeError):
    pass


def grad_check(loss_fn, tensors: dict, analytic: dict, step: float = 1e-5) -> float:
    """Compare analytic gradients against central finite differences.

    loss_fn: zero-argument callable re-evaluating the scalar loss from the
    current contents of `tensors` (perturbed in place, then restored).
    tensors / analytic: name -> array, same keys and shapes.
    Returns the max relative error |a - n| / max(|a|, |n|, 1e-8).
    Raises GradCheckError naming the tensor if an analytic gradient is
    non-finite.
    """
    worst = 0.0
    for name, arr in tensors.items():
        ana = np.asarray(analytic[name], dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(ana)):
            raise GradCheckError(f"non-finite analytic gradient for {name!r}")
        flat = arr.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            lp = loss_fn()
            flat[idx] = orig - step
            lm = loss_fn()
            flat[idx] = orig
            num = (lp - lm) / (2.0 * step)
            rel = abs(ana[idx] - num) / max(abs(ana[idx]), abs(num), 1e-8)
            if rel > worst:
                worst = rel
    return worst
