"""Shadow-dilation feature augmentation, the 3-block CNN classifier, and
joint encoder+classifier fine-tuning.

The classifier consumes a 4x12x12 tensor per window: each feature row is
replicated 12 times (row 0 exact, rows 1..11 with small Gaussian noise)
so the 4x12 feature matrix becomes image-like.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .features import FEATURE_TYPES
from .fin import TrainingDiverged, bank_backward, bank_forward
from .nn import (
    BatchNorm2d,
    Conv2d,
    Dense,
    Dropout,
    GlobalAvgPool2d,
    PReLU,
    adam_step,
    softmax_cross_entropy,
    zero_grads,
)
from .rng import substream

N_CLASSES = 17
AUGMENT_NOISE_STD = 0.01
CNN_CHANNELS = (4, 32, 64, 128)


def augment(features, rng: np.random.Generator, noise_std: float = AUGMENT_NOISE_STD) -> np.ndarray:
    """Expand one 4x12 feature matrix into a 4x12x12 tensor.

    Replica row 0 is the source row bit-exact; rows 1..11 add i.i.d.
    Gaussian noise (mean 0, std `noise_std`). noise_std 0 tiles exactly.
    """
    values = features.values if hasattr(features, "values") else np.asarray(features)
    if values.shape != (4, 12):
        raise ValueError(f"augment: expected a 4x12 feature matrix, got {values.shape}")
    return augment_batch(values[None], rng, noise_std)[0]


def augment_batch(features: np.ndarray, rng: np.random.Generator | None, noise_std: float = AUGMENT_NOISE_STD) -> np.ndarray:
    """[n, 4, 12] -> [n, 4, 12, 12] replica tensors (see `augment`)."""
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    out = np.repeat(features[:, :, None, :], 12, axis=2)
    if noise_std > 0.0:
        if rng is None:
            raise ValueError("augment_batch: noise_std > 0 requires an rng")
        out[:, :, 1:, :] += rng.normal(0.0, noise_std, size=(n, 4, 11, 12))
    return out


class CnnModel:
    """3 blocks of (3x3 same conv, batch norm, PReLU) with channels
    4->32->64->128, dropout 0.3 between blocks 1 and 2, global average
    pooling and a dense layer to 17 classes."""

    def __init__(self, rng: np.random.Generator | None = None, n_classes: int = N_CLASSES):
        c = CNN_CHANNELS
        self.conv = [Conv2d(c[i], c[i + 1], 3, rng) for i in range(3)]
        self.bn = [BatchNorm2d(c[i + 1]) for i in range(3)]
        self.act = [PReLU() for _ in range(3)]
        self.dropout = Dropout(0.3)
        self.pool = GlobalAvgPool2d()
        self.head = Dense(c[3], n_classes, rng)
        self.n_classes = n_classes

    def forward(self, x: np.ndarray, mode: str, rng: np.random.Generator | None = None) -> np.ndarray:
        """[batch, 4, 12, 12] -> logits [batch, 17]."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 4 or x.shape[1:] != (4, 12, 12):
            raise ValueError(f"cnn: expected [batch, 4, 12, 12], got {x.shape}")
        for i in range(3):
            x = self.conv[i].forward(x)
            x = self.bn[i].forward(x, mode)
            x = self.act[i].forward(x)
            if i == 0:
                x = self.dropout.forward(x, mode, rng)
        x = self.pool.forward(x)
        return self.head.forward(x)

    def backward(self, d_logits: np.ndarray) -> np.ndarray:
        dx = self.head.backward(d_logits)
        dx = self.pool.backward(dx)
        for i in range(2, -1, -1):
            if i == 0:
                dx = self.dropout.backward(dx)
            dx = self.act[i].backward(dx)
            dx = self.bn[i].backward(dx)
            dx = self.conv[i].backward(dx)
        return dx

    def params(self):
        out = []
        for i in range(3):
            out.extend(self.conv[i].params())
            out.extend(self.bn[i].params())
            out.extend(self.act[i].params())
        out.extend(self.head.params())
        return out

    def named_params(self):
        out = []
        for i in range(3):
            out.append((f"conv{i}.W", self.conv[i].W))
            out.append((f"conv{i}.b", self.conv[i].b))
            out.append((f"bn{i}.gamma", self.bn[i].gamma))
            out.append((f"bn{i}.beta", self.bn[i].beta))
            out.append((f"prelu{i}.alpha", self.act[i].alpha))
        out.append(("head.W", self.head.W))
        out.append(("head.b", self.head.b))
        return out

    def clone(self) -> "CnnModel":
        """Deep copy including batch-norm running stats and Adam state."""
        twin = CnnModel()
        for (_, src), (_, dst) in zip(self.named_params(), twin.named_params()):
            dst.value[...] = src.value
            dst.grad[...] = src.grad
            dst.adam_m[...] = src.adam_m
            dst.adam_v[...] = src.adam_v
            dst.step_count = src.step_count
        for i in range(3):
            twin.bn[i].running_mean[...] = self.bn[i].running_mean
            twin.bn[i].running_var[...] = self.bn[i].running_var
            twin.bn[i].batches_tracked = self.bn[i].batches_tracked
        return twin


def cnn_forward(model: CnnModel, tensor: np.ndarray, mode: str, rng=None) -> np.ndarray:
    """Logits for a single 4x12x12 tensor."""
    tensor = np.asarray(tensor, dtype=np.float64)
    if tensor.shape != (4, 12, 12):
        raise ValueError(f"cnn_forward: expected a 4x12x12 tensor, got {tensor.shape}")
    return model.forward(tensor[None], mode, rng)[0]


def _cnn_snapshot(model: CnnModel):
    params = [p.value.copy() for p in model.params()]
    stats = [(bn.running_mean.copy(), bn.running_var.copy(), bn.batches_tracked) for bn in model.bn]
    return params, stats


def _cnn_restore(model: CnnModel, snap) -> None:
    params, stats = snap
    for p, saved in zip(model.params(), params):
        p.value[...] = saved
    for bn, (rm, rv, bt) in zip(model.bn, stats):
        bn.running_mean[...] = rm
        bn.running_var[...] = rv
        bn.batches_tracked = bt


@dataclass
class CnnConvergence:
    epochs_run: int = 0
    best_epoch: int = 0
    best_val_accuracy: float = -1.0
    train_loss: list = field(default_factory=list)
    train_accuracy: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    seconds_per_epoch: list = field(default_factory=list)


def train_cnn(
    model: CnnModel,
    features: np.ndarray,
    labels: np.ndarray,
    max_epochs: int,
    patience: int,
    seed: int,
    batch_size: int = 128,
    lr: float = 1e-3,
    weight_decay: float = 2e-5,
    val_fraction: float = 0.1,
    splits=None,
    audit=None,
    stream_tag: str = "cnn",
) -> CnnConvergence:
    """Cross-entropy training on normalized 4x12 feature matrices.

    Shadow-dilation noise is resampled every epoch; early stopping watches
    accuracy on a 10% held-out validation subset. The model is restored to
    its best-validation snapshot.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = features.shape[0]
    if n == 0:
        raise ValueError("train_cnn: no training data")
    if labels.min() < 1 or labels.max() > model.n_classes:
        raise ValueError(f"train_cnn: labels must be in 1..{model.n_classes}")
    targets = labels - 1
    perm = substream(seed, stream_tag, "val-split").permutation(n)
    n_val = max(1, int(round(val_fraction * n))) if val_fraction > 0 and n > 1 else 0
    val_idx = perm[:n_val]
    train_idx = perm[n_val:]
    record = CnnConvergence()
    snap = _cnn_snapshot(model)
    since_best = 0
    params = model.params()
    drop_rng = substream(seed, stream_tag, "dropout")
    for epoch in range(1, max_epochs + 1):
        t0 = time.perf_counter()
        aug_rng = substream(seed, stream_tag, "augment", epoch)
        order = substream(seed, stream_tag, "shuffle", epoch).permutation(train_idx.size)
        epoch_loss = 0.0
        hits = 0
        for lo in range(0, train_idx.size, batch_size):
            batch = train_idx[order[lo : lo + batch_size]]
            if audit is not None and splits is not None:
                audit.observe(stream_tag, splits[batch])
            tensors = augment_batch(features[batch], aug_rng)
            logits = model.forward(tensors, "train", drop_rng)
            loss, d_logits = softmax_cross_entropy(logits, targets[batch])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite classifier loss at epoch {epoch}")
            epoch_loss += loss * batch.size
            hits += int((logits.argmax(axis=1) == targets[batch]).sum())
            zero_grads(params)
            model.backward(d_logits)
            adam_step(params, lr=lr, weight_decay=weight_decay)
        record.epochs_run = epoch
        record.train_loss.append(epoch_loss / train_idx.size)
        record.train_accuracy.append(hits / train_idx.size)
        if n_val:
            val_acc = _eval_accuracy(model, features[val_idx], targets[val_idx], batch_size)
        else:
            val_acc = record.train_accuracy[-1]
        record.val_accuracy.append(val_acc)
        record.seconds_per_epoch.append(time.perf_counter() - t0)
        if val_acc > record.best_val_accuracy:
            record.best_val_accuracy = val_acc
            record.best_epoch = epoch
            snap = _cnn_snapshot(model)
            since_best = 0
        else:
            since_best += 1
        if since_best >= patience:
            break
    _cnn_restore(model, snap)
    return record


def _eval_accuracy(model: CnnModel, features, targets, batch_size) -> float:
    hits = 0
    for lo in range(0, features.shape[0], batch_size):
        tensors = augment_batch(features[lo : lo + batch_size], None, noise_std=0.0)
        logits = model.forward(tensors, "eval")
        hits += int((logits.argmax(axis=1) == targets[lo : lo + batch_size]).sum())
    return hits / features.shape[0]


def predict_from_features(model: CnnModel, features: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Eval-mode class predictions (1..17) from normalized [n, 4, 12] features.

    Evaluation replicates rows without noise, so repeated calls agree.
    """
    out = np.empty(features.shape[0], dtype=np.int64)
    for lo in range(0, features.shape[0], batch_size):
        tensors = augment_batch(features[lo : lo + batch_size], None, noise_std=0.0)
        logits = model.forward(tensors, "eval")
        out[lo : lo + batch_size] = logits.argmax(axis=1) + 1
    return out


# ---------------------------------------------------------------------------
# joint encoder + classifier fine-tuning


@dataclass
class JointRecord:
    epochs_run: int = 0
    train_loss: list = field(default_factory=list)
    train_accuracy: list = field(default_factory=list)
    seconds_per_epoch: list = field(default_factory=list)


def finetune_joint(
    fins,
    cnn: CnnModel,
    samples: np.ndarray,
    labels: np.ndarray,
    epochs: int,
    seed: int,
    batch_windows: int = 8,
    lr: float = 1e-3,
    weight_decay: float = 2e-5,
    splits=None,
    audit=None,
) -> JointRecord:
    """Fine-tune the full imitate -> augment -> classify chain in place.

    samples: [n, 600, 12] windows; labels: 1..17 (of the horizon-target
    window). The cross-entropy gradient flows through the classifier and
    all four feature regressors.
    """
    if len(fins) != len(FEATURE_TYPES):
        raise ValueError("finetune_joint: expected one regressor per feature type")
    samples = np.asarray(samples, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = samples.shape[0]
    if n == 0:
        raise ValueError("finetune_joint: no fine-tuning windows")
    targets = labels - 1
    fin_params = [p for m in fins for p in m.params()]
    cnn_params = cnn.params()
    all_params = fin_params + cnn_params
    record = JointRecord()
    drop_rng = substream(seed, "joint", "dropout")
    engine_ws: dict = {}
    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        aug_rng = substream(seed, "joint", "augment", epoch)
        order = substream(seed, "joint", "shuffle", epoch).permutation(n)
        epoch_loss = 0.0
        hits = 0
        for lo in range(0, n, batch_windows):
            batch = order[lo : lo + batch_windows]
            if audit is not None and splits is not None:
                audit.observe("joint", splits[batch])
            k = batch.size
            x = np.ascontiguousarray(samples[batch].transpose(0, 2, 1)).reshape(k * 12, -1)
            preds, caches = bank_forward(fins, x, want_cache=True, ws=engine_ws)
            feats = preds.reshape(4, k, 12).transpose(1, 0, 2)
            tensors = augment_batch(feats, aug_rng)
            logits = cnn.forward(tensors, "train", drop_rng)
            loss, d_logits = softmax_cross_entropy(logits, targets[batch])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite joint loss at epoch {epoch}")
            epoch_loss += loss * k
            hits += int((logits.argmax(axis=1) == targets[batch]).sum())
            zero_grads(all_params)
            d_tensors = cnn.backward(d_logits)
            d_feats = d_tensors.sum(axis=2)  # every replica row carries the source
            d_preds = np.ascontiguousarray(d_feats.transpose(1, 0, 2)).reshape(4, k * 12)
            bank_backward(fins, d_preds, caches, ws=engine_ws)
            adam_step(all_params, lr=lr, weight_decay=weight_decay)
        record.epochs_run = epoch
        record.train_loss.append(epoch_loss / n)
        record.train_accuracy.append(hits / n)
        record.seconds_per_epoch.append(time.perf_counter() - t0)
    return record


# ---------------------------------------------------------------------------
# evaluation


WITHIN_SUBJECTS = range(1, 26)
CROSS_SUBJECTS = range(26, 41)


def group_accuracy(per_subject: dict) -> dict:
    """Subject-weighted mean/std per group (within 1-25, cross 26-40, all)."""
    groups = {
        "within": [a for s, a in per_subject.items() if s in WITHIN_SUBJECTS],
        "cross": [a for s, a in per_subject.items() if s in CROSS_SUBJECTS],
        "all": list(per_subject.values()),
    }
    out = {}
    for name, vals in groups.items():
        if vals:
            arr = np.asarray(vals, dtype=np.float64)
            out[name] = {
                "mean": float(arr.mean()),
                "std": float(arr.std()),
                "n_subjects": int(arr.size),
            }
        else:
            out[name] = {"mean": None, "std": None, "n_subjects": 0}
    return out


def evaluate_predictions(pred_labels: np.ndarray, true_labels: np.ndarray, subjects: np.ndarray):
    """Per-subject accuracy plus group aggregates; skips empty subjects."""
    per_subject = {}
    warnings = []
    for subj in np.unique(subjects):
        mask = subjects == subj
        if not mask.any():
            warnings.append(f"subject {subj}: no test windows, skipped")
            continue
        per_subject[int(subj)] = float((pred_labels[mask] == true_labels[mask]).mean())
    return {"per_subject": per_subject, "groups": group_accuracy(per_subject), "warnings": warnings}
