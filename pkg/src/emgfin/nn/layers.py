"""Feed-forward layers with explicit forward/backward passes.

Each layer caches whatever its backward pass needs, so instances are
single-flight: one forward, then the matching backward. Parameter
gradients accumulate into `Param.grad` (callers zero them between steps).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .params import Param


class Dense:
    """Fully connected layer: y = x W^T + b."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator | None = None):
        self.in_dim = in_dim
        self.out_dim = out_dim
        if rng is None:
            self.W = Param.zeros(out_dim, in_dim)
        else:
            self.W = Param.uniform((out_dim, in_dim), in_dim, rng)
        self.b = Param.zeros(out_dim)
        self._x = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(
                f"dense: input shape {x.shape} does not match W {self.W.shape} "
                f"(expected [batch, {self.in_dim}])"
            )
        self._x = x
        return x @ self.W.value.T + self.b.value

    def backward(self, dy: np.ndarray) -> np.ndarray:
        self.W.grad += dy.T @ self._x
        self.b.grad += dy.sum(axis=0)
        return dy @ self.W.value

    def params(self):
        return [self.W, self.b]


class Conv2d:
    """Same-padded 2D cross-correlation. Kernel sides must be odd."""

    def __init__(self, in_ch: int, out_ch: int, ksize: int, rng: np.random.Generator | None = None):
        if ksize % 2 != 1:
            raise ValueError(f"conv2d: kernel size must be odd for same padding, got {ksize}")
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.ksize = ksize
        fan_in = in_ch * ksize * ksize
        if rng is None:
            self.W = Param.zeros(out_ch, in_ch, ksize, ksize)
        else:
            self.W = Param.uniform((out_ch, in_ch, ksize, ksize), fan_in, rng)
        self.b = Param.zeros(out_ch)
        self._cols = None
        self._xshape = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise ValueError(
                f"conv2d: input shape {x.shape} does not match kernels "
                f"{self.W.shape} (expected [batch, {self.in_ch}, H, W])"
            )
        bsz, _, hh, ww = x.shape
        k = self.ksize
        p = k // 2
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        win = sliding_window_view(xp, (k, k), axis=(2, 3))  # [B, C, H, W, k, k]
        cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
            bsz * hh * ww, self.in_ch * k * k
        )
        self._cols = cols
        self._xshape = x.shape
        wm = self.W.value.reshape(self.out_ch, -1)
        y = cols @ wm.T + self.b.value
        return y.reshape(bsz, hh, ww, self.out_ch).transpose(0, 3, 1, 2)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        bsz, _, hh, ww = self._xshape
        k = self.ksize
        p = k // 2
        dyf = np.ascontiguousarray(dy.transpose(0, 2, 3, 1)).reshape(bsz * hh * ww, self.out_ch)
        self.W.grad += (dyf.T @ self._cols).reshape(self.W.shape)
        self.b.grad += dyf.sum(axis=0)
        dcols = (dyf @ self.W.value.reshape(self.out_ch, -1)).reshape(
            bsz, hh, ww, self.in_ch, k, k
        )
        dxp = np.zeros((bsz, self.in_ch, hh + 2 * p, ww + 2 * p))
        for a in range(k):
            for c in range(k):
                dxp[:, :, a : a + hh, c : c + ww] += dcols[:, :, :, :, a, c].transpose(0, 3, 1, 2)
        return dxp[:, :, p : p + hh, p : p + ww]

    def params(self):
        return [self.W, self.b]


class BatchNorm2d:
    """Per-channel batch normalization over (batch, H, W)."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = Param(np.ones(channels))
        self.beta = Param.zeros(channels)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.batches_tracked = 0
        self._cache = None

    def forward(self, x: np.ndarray, mode: str) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ValueError(
                f"batchnorm2d: input shape {x.shape} does not match {self.channels} channels"
            )
        if mode == "train":
            n = x.shape[0] * x.shape[2] * x.shape[3]
            if n < 2:
                raise ValueError("batchnorm2d: train mode needs at least 2 values per channel")
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            self.running_mean = (1.0 - self.momentum) * self.running_mean + self.momentum * mean
            self.running_var = (1.0 - self.momentum) * self.running_var + self.momentum * var
            self.batches_tracked += 1
        elif mode == "eval":
            if self.batches_tracked == 0:
                raise RuntimeError("batchnorm2d: eval mode before any training batch")
            mean = self.running_mean
            var = self.running_var
            n = None
        else:
            raise ValueError(f"batchnorm2d: unknown mode {mode!r}")
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        self._cache = (xhat, inv_std, mode, n)
        return self.gamma.value[None, :, None, None] * xhat + self.beta.value[None, :, None, None]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        xhat, inv_std, mode, n = self._cache
        self.gamma.grad += (dy * xhat).sum(axis=(0, 2, 3))
        self.beta.grad += dy.sum(axis=(0, 2, 3))
        dxhat = dy * self.gamma.value[None, :, None, None]
        if mode == "eval":
            return dxhat * inv_std[None, :, None, None]
        # train mode: batch statistics depend on x
        sum_dxhat = dxhat.sum(axis=(0, 2, 3), keepdims=True)
        sum_dxhat_x = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        return (inv_std[None, :, None, None] / n) * (n * dxhat - sum_dxhat - xhat * sum_dxhat_x)

    def params(self):
        return [self.gamma, self.beta]


class PReLU:
    """y = x for x > 0 else alpha * x, with one trainable alpha per layer."""

    def __init__(self, init: float = 0.25):
        self.alpha = Param(np.array([init]))
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        pos = x > 0
        self._cache = (x, pos)
        return np.where(pos, x, self.alpha.value[0] * x)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x, pos = self._cache
        self.alpha.grad += np.array([(dy * np.where(pos, 0.0, x)).sum()])
        return dy * np.where(pos, 1.0, self.alpha.value[0])

    def params(self):
        return [self.alpha]


class Dropout:
    """Inverted dropout: eval mode is the identity."""

    def __init__(self, rate: float = 0.3):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout: rate must be in [0, 1), got {rate}")
        self.rate = rate
        self._mask = None

    def forward(self, x: np.ndarray, mode: str, rng: np.random.Generator | None = None) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if mode == "eval" or self.rate == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError("dropout: train mode requires an rng")
        keep = rng.random(x.shape) >= self.rate
        self._mask = keep / (1.0 - self.rate)
        return x * self._mask

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._mask is None:
            return dy
        return dy * self._mask

    def params(self):
        return []


class GlobalAvgPool2d:
    """[B, C, H, W] -> [B, C] spatial mean."""

    def __init__(self):
        self._shape = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        _, _, hh, ww = self._shape
        return np.broadcast_to(dy[:, :, None, None], self._shape) / (hh * ww)

    def params(self):
        return []
