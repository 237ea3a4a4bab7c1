"""Closed-form temporal features (ENT, RMS, VAR, SSI) and their z-scoring.

A FeatureMatrix is the 4x12 (feature-type x channel) summary of one
600-sample window; row order is fixed as [ENT, RMS, VAR, SSI].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FEATURE_TYPES = ("ENT", "RMS", "VAR", "SSI")
ENTROPY_BINS = 100


def rms(x) -> float:
    """Root mean square, sqrt(sum(x^2)/N)."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("rms: empty input")
    return float(np.sqrt(np.mean(x * x)))


def variance(x) -> float:
    """Sample variance with the N-1 denominator."""
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        raise ValueError("variance: need at least 2 samples")
    return float(np.var(x, ddof=1))


def ssi(x) -> float:
    """Simple square integral, sum(x^2) — accumulated window energy."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("ssi: empty input")
    return float(np.sum(x * x))


def entropy(x, bins: int = ENTROPY_BINS) -> float:
    """Shannon entropy (nats) of the `bins`-bin histogram over [min, max].

    Bin k covers [min + k*w, min + (k+1)*w) with w = (max-min)/bins; the
    top edge closes the last bin. A constant signal has zero entropy by
    convention; empty bins contribute nothing. Bounded by ln(bins).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("entropy: empty input")
    return float(_entropy_rows(x.reshape(1, -1), bins)[0])


def _entropy_rows(x: np.ndarray, bins: int = ENTROPY_BINS) -> np.ndarray:
    """Entropy of each row of x [m, n] via one shared bincount pass."""
    m, n = x.shape
    lo = x.min(axis=1, keepdims=True)
    hi = x.max(axis=1, keepdims=True)
    span = hi - lo
    degenerate = span[:, 0] == 0.0
    span[degenerate[:, None]] = 1.0
    idx = ((x - lo) * (bins / span)).astype(np.intp)
    np.clip(idx, 0, bins - 1, out=idx)
    idx += np.arange(m, dtype=np.intp)[:, None] * bins
    counts = np.bincount(idx.ravel(), minlength=m * bins).reshape(m, bins)
    p = counts / n
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, p * np.log(p), 0.0)
    ent = -terms.sum(axis=1)
    ent[degenerate] = 0.0
    return ent


@dataclass
class FeatureMatrix:
    """4x12 feature values for one window; `normalized` marks z-scored values."""

    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (4, 12):
            raise ValueError(f"FeatureMatrix: expected shape (4, 12), got {self.values.shape}")


def extract_batch(samples: np.ndarray, bins: int = ENTROPY_BINS) -> np.ndarray:
    """Features for a stack of windows: [n, 600, 12] -> [n, 4, 12]."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 3:
        raise ValueError(f"extract_batch: expected [n, T, channels], got {samples.shape}")
    n, t, ch = samples.shape
    out = np.empty((n, 4, ch))
    sq_mean = np.mean(samples * samples, axis=1)  # [n, ch]
    out[:, 1, :] = np.sqrt(sq_mean)
    out[:, 2, :] = np.var(samples, axis=1, ddof=1)
    out[:, 3, :] = sq_mean * t
    flat = samples.transpose(0, 2, 1).reshape(n * ch, t)
    out[:, 0, :] = _entropy_rows(flat, bins).reshape(n, ch)
    return out


def extract(window) -> FeatureMatrix:
    """Raw FeatureMatrix of one Window (or bare [600, 12] array)."""
    samples = window.samples if hasattr(window, "samples") else np.asarray(window)
    if samples.ndim != 2 or samples.shape[1] != 12:
        raise ValueError(f"extract: expected a 600x12 window, got {samples.shape}")
    return FeatureMatrix(extract_batch(samples[None])[0], normalized=False)


@dataclass
class FeatureStats:
    """Per-feature-type mean/std pooled over channels and windows."""

    mean: np.ndarray  # [4]
    std: np.ndarray  # [4]

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(4)
        self.std = np.asarray(self.std, dtype=np.float64).reshape(4)


def fit_feature_stats(raw_features) -> FeatureStats:
    """Fit z-score stats from raw features [n, 4, 12] (or FeatureMatrix list)."""
    arr = _as_feature_array(raw_features)
    mean = arr.mean(axis=(0, 2))
    std = arr.std(axis=(0, 2))
    for fi, s in enumerate(std):
        if s == 0.0:
            raise ValueError(f"fit_feature_stats: zero std for feature {FEATURE_TYPES[fi]}")
    return FeatureStats(mean, std)


def apply_feature_stats(features, stats: FeatureStats):
    """Z-score features with previously fitted stats (pure affine map)."""
    if isinstance(features, FeatureMatrix):
        vals = (features.values - stats.mean[:, None]) / stats.std[:, None]
        return FeatureMatrix(vals, normalized=True)
    arr = np.asarray(features, dtype=np.float64)
    return (arr - stats.mean[None, :, None]) / stats.std[None, :, None]


def unapply_feature_stats(features, stats: FeatureStats):
    """Invert `apply_feature_stats` back to the raw feature scale."""
    arr = np.asarray(features, dtype=np.float64)
    return arr * stats.std[None, :, None] + stats.mean[None, :, None]


def _as_feature_array(features) -> np.ndarray:
    if isinstance(features, np.ndarray):
        arr = features
    else:
        mats = [f.values if isinstance(f, FeatureMatrix) else np.asarray(f) for f in features]
        arr = np.stack(mats)
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[1] != 4:
        raise ValueError(f"expected features [n, 4, channels], got {arr.shape}")
    return arr
