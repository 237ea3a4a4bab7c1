"""Loss functions. Each returns (scalar loss, gradient w.r.t. the prediction)."""

from __future__ import annotations

import numpy as np


def softmax_cross_entropy(logits: np.ndarray, targets: np.ndarray):
    """Mean negative log softmax probability of the target class.

    logits: [batch, K], targets: integer class indices in [0, K).
    Gradient is (softmax - one_hot) / batch. Invariant to adding a
    per-row constant to the logits.
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ValueError(f"softmax_cross_entropy: logits must be [batch, K>=2], got {logits.shape}")
    batch, k = logits.shape
    if targets.shape != (batch,):
        raise ValueError(
            f"softmax_cross_entropy: targets shape {targets.shape} does not match batch {batch}"
        )
    if targets.min() < 0 or targets.max() >= k:
        raise ValueError(
            f"softmax_cross_entropy: target out of range [0, {k}): {int(targets.min())}..{int(targets.max())}"
        )
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    rows = np.arange(batch)
    log_p = shifted[rows, targets] - np.log(exp.sum(axis=1))
    loss = float(-log_p.mean())
    grad = probs
    grad[rows, targets] -= 1.0
    grad /= batch
    return loss, grad


def mse_loss(pred: np.ndarray, target: np.ndarray):
    """Mean squared error; gradient is 2(pred - target)/N."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"mse_loss: shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    grad = 2.0 * diff / diff.size
    return loss, grad
