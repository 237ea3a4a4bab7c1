"""Feature-imitation regressors: one small bidirectional recurrent network
per feature type, each mapping a 600-sample single-channel sequence to one
normalized feature value.

The four regressors are architecturally identical (3 bidirectional layers,
32 hidden units per direction, input width 1, dense 64->1 head). Training
and inference run them as stacked lanes through the shared sequence
engine, which is why most entry points accept a list of models.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import WINDOW_SAMPLES, WindowSet, stratified_cap
from .features import FEATURE_TYPES, FeatureMatrix, FeatureStats, apply_feature_stats, extract_batch
from .nn import (
    Dense,
    LstmCellParams,
    adam_step,
    bilstm_multi_backward,
    bilstm_multi_forward,
    mse_loss,
    zero_grads,
)
from .rng import substream

FIN_HIDDEN = 32
FIN_LAYER_INPUTS = (1, 64, 64)
SEQ_LEN = WINDOW_SAMPLES
HORIZONS_MS = (50, 100, 150, 200, 250, 300)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class HorizonSpec:
    """Forward-in-time prediction horizon; samples = ms * 2 at 2 kHz."""

    horizon_ms: int

    def __post_init__(self):
        if self.horizon_ms not in (0,) + HORIZONS_MS:
            raise ValueError(
                f"horizon_ms must be one of {(0,) + HORIZONS_MS}, got {self.horizon_ms}"
            )

    @property
    def horizon_samples(self) -> int:
        return self.horizon_ms * 2


class FinModel:
    """One feature regressor: 3 bidirectional layers + dense head."""

    def __init__(self, feature_type: str, rng: np.random.Generator | None = None):
        if feature_type not in FEATURE_TYPES:
            raise ValueError(f"unknown feature type {feature_type!r}")
        self.feature_type = feature_type
        self.layers = [
            (LstmCellParams(d, FIN_HIDDEN, rng), LstmCellParams(d, FIN_HIDDEN, rng))
            for d in FIN_LAYER_INPUTS
        ]
        self.head = Dense(2 * FIN_HIDDEN, 1, rng)

    def params(self):
        out = []
        for fwd, bwd in self.layers:
            out.extend(fwd.params())
            out.extend(bwd.params())
        out.extend(self.head.params())
        return out

    def named_params(self):
        out = []
        for li, (fwd, bwd) in enumerate(self.layers):
            for tag, cell in (("fwd", fwd), ("bwd", bwd)):
                out.append((f"layer{li}.{tag}.W_ih", cell.W_ih))
                out.append((f"layer{li}.{tag}.W_hh", cell.W_hh))
                out.append((f"layer{li}.{tag}.b", cell.b))
        out.append(("head.W", self.head.W))
        out.append(("head.b", self.head.b))
        return out

    def parameter_count(self):
        """Per-layer and total trainable parameter counts."""
        rows = []
        for li, (fwd, bwd) in enumerate(self.layers):
            n = sum(p.size for p in fwd.params()) + sum(p.size for p in bwd.params())
            rows.append((f"bilstm layer {li} (in={fwd.input_dim}, hidden={FIN_HIDDEN}x2)", n))
        rows.append(("dense head 64->1", self.head.W.size + self.head.b.size))
        total = sum(n for _, n in rows)
        return rows, total

    def clone(self) -> "FinModel":
        """Deep copy including optimizer state."""
        twin = FinModel(self.feature_type)
        for (_, src), (_, dst) in zip(self.named_params(), twin.named_params()):
            dst.value[...] = src.value
            dst.grad[...] = src.grad
            dst.adam_m[...] = src.adam_m
            dst.adam_v[...] = src.adam_v
            dst.step_count = src.step_count
        return twin


def fin_forward(model: FinModel, x: np.ndarray) -> np.ndarray:
    """x [batch, 600, 1] -> [batch, 1] imitated (normalized) feature."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[1] != SEQ_LEN or x.shape[2] != 1:
        raise ValueError(f"fin_forward: expected [batch, {SEQ_LEN}, 1], got {x.shape}")
    hidden = bilstm_multi_forward(x[None], [model.layers])[0]
    return model.head.forward(hidden)


def bank_forward(models, x: np.ndarray, want_cache: bool = False, ws: dict | None = None):
    """Run several regressors on the same sequences: x [B, 600] -> [M, B].

    With want_cache, also returns the engine caches plus the hidden states
    needed to backpropagate (`bank_backward`).
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    mm = len(models)
    xm = np.broadcast_to(x[None, :, :, None], (mm,) + x.shape + (1,))
    layer_lists = [m.layers for m in models]
    if want_cache:
        hidden, caches = bilstm_multi_forward(xm, layer_lists, want_cache=True, ws=ws)
    else:
        hidden = bilstm_multi_forward(xm, layer_lists, ws=ws)
    preds = np.empty((mm, x.shape[0]))
    for mi, model in enumerate(models):
        preds[mi] = model.head.forward(hidden[mi])[:, 0]
    if want_cache:
        return preds, caches
    return preds


def bank_backward(models, d_preds: np.ndarray, caches, ws: dict | None = None) -> None:
    """Accumulate gradients for `bank_forward`; d_preds is [M, B]."""
    mm = len(models)
    bb = d_preds.shape[1]
    d_hidden = np.empty((mm, bb, 2 * FIN_HIDDEN))
    for mi, model in enumerate(models):
        d_hidden[mi] = model.head.backward(d_preds[mi][:, None])
    bilstm_multi_backward(d_hidden, caches, [m.layers for m in models], ws=ws)


# ---------------------------------------------------------------------------
# training pairs


@dataclass
class PairBank:
    """Per-(window, channel) sequences with targets for one or more features.

    x: [n, 600]; y: [n] (single feature) or [n, F]; window_index points
    back into the WindowSet the pairs came from.
    """

    x: np.ndarray
    y: np.ndarray
    window_index: np.ndarray
    channel: np.ndarray
    skipped_windows: int = 0
    splits: np.ndarray | None = None

    def __len__(self):
        return self.x.shape[0]


def resolve_targets(ws: WindowSet, src_indices: np.ndarray, horizon: HorizonSpec):
    """Map source windows to the window `horizon` later in the same recording.

    Returns (kept_src, tgt, skipped): sources whose target window exists
    (and, being a window at all, carries a movement label).
    """
    src_indices = np.asarray(src_indices, dtype=np.int64)
    offset = horizon.horizon_samples
    if offset == 0:
        return src_indices, src_indices.copy(), 0
    lookup = {}
    for j in range(len(ws)):
        lookup[(int(ws.rec_index[j]), int(ws.start[j]))] = j
    kept, tgt = [], []
    skipped = 0
    for i in src_indices:
        key = (int(ws.rec_index[i]), int(ws.start[i]) + offset)
        j = lookup.get(key)
        if j is None:
            skipped += 1
        else:
            kept.append(int(i))
            tgt.append(j)
    return (
        np.asarray(kept, dtype=np.int64),
        np.asarray(tgt, dtype=np.int64),
        skipped,
    )


def build_pair_bank(
    ws: WindowSet,
    src_indices,
    horizon: HorizonSpec,
    stats: FeatureStats,
    max_windows: int = 0,
    seed: int | None = None,
    feature_types=FEATURE_TYPES,
) -> PairBank:
    """Expand windows into per-channel training pairs for several features.

    y[:, f] is the normalized feature f of the same channel of the window
    starting `horizon` later (horizon 0: the window itself). Windows whose
    target does not exist are skipped and counted. With max_windows > 0 the
    source windows are subsampled (stratified by label, seeded).
    """
    src, tgt, skipped = resolve_targets(ws, src_indices, horizon)
    if max_windows and src.size > max_windows:
        if seed is None:
            raise ValueError("build_pair_bank: max_windows needs a seed")
        rng = substream(seed, "pair-window-cap", horizon.horizon_ms)
        keep = stratified_cap(ws.label[src], max_windows, rng)
        src, tgt = src[keep], tgt[keep]
    n_w = src.size
    samples = ws.gather(src)  # [n_w, 600, 12]
    x = np.ascontiguousarray(samples.transpose(0, 2, 1)).reshape(n_w * 12, WINDOW_SAMPLES)
    feats = apply_feature_stats(extract_batch(ws.gather(tgt)), stats)  # [n_w, 4, 12]
    rows = [FEATURE_TYPES.index(f) for f in feature_types]
    y = np.ascontiguousarray(feats[:, rows, :].transpose(0, 2, 1)).reshape(n_w * 12, len(rows))
    window_index = np.repeat(src, 12)
    channel = np.tile(np.arange(12, dtype=np.int64), n_w)
    return PairBank(
        x=x,
        y=y,
        window_index=window_index,
        channel=channel,
        skipped_windows=skipped,
        splits=ws.split[window_index],
    )


def make_training_pairs(
    ws: WindowSet,
    feature_type: str,
    horizon: HorizonSpec,
    stats: FeatureStats,
    indices=None,
) -> PairBank:
    """Single-feature pairs: x [n, 600] channel sequences, y [n] scalars."""
    if indices is None:
        indices = np.arange(len(ws))
    bank = build_pair_bank(ws, indices, horizon, stats, feature_types=(feature_type,))
    bank.y = bank.y[:, 0]
    return bank


# ---------------------------------------------------------------------------
# training


@dataclass
class ConvergenceRecord:
    """Per-model early-stopping trace."""

    feature_type: str
    epochs_run: int = 0
    best_epoch: int = 0
    best_val_loss: float = float("inf")
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    seconds_per_epoch: list = field(default_factory=list)


def _snapshot(model: FinModel):
    return [p.value.copy() for p in model.params()]


def _restore(model: FinModel, snap) -> None:
    for p, saved in zip(model.params(), snap):
        p.value[...] = saved


def train_fin_bank(
    models,
    pairs: PairBank,
    max_epochs: int,
    patience: int,
    seed: int,
    batch_size: int = 64,
    lr: float = 1e-3,
    weight_decay: float = 2e-5,
    val_fraction: float = 0.1,
    audit=None,
):
    """Jointly iterate several regressors over shared pairs (MSE + Adam).

    Each model keeps its own best-validation snapshot and stops improving
    independently; the loop ends once every model has gone `patience`
    epochs without a validation improvement (or at max_epochs). Models are
    restored to their best snapshots. Returns a ConvergenceRecord list.
    """
    import time

    mm = len(models)
    n = len(pairs)
    if n == 0:
        raise ValueError("train_fin_bank: no training pairs")
    y = pairs.y if pairs.y.ndim == 2 else pairs.y[:, None]
    if y.shape[1] != mm:
        raise ValueError(f"train_fin_bank: {mm} models but targets have {y.shape[1]} columns")
    rng_val = substream(seed, "fin-val-split")
    perm = rng_val.permutation(n)
    n_val = max(1, int(round(val_fraction * n))) if val_fraction > 0 else 0
    val_idx = perm[:n_val]
    train_idx = perm[n_val:]
    if train_idx.size == 0:
        raise ValueError("train_fin_bank: validation split leaves no training pairs")
    records = [ConvergenceRecord(m.feature_type) for m in models]
    snaps = [_snapshot(m) for m in models]
    since_best = [0] * mm
    all_params = [p for m in models for p in m.params()]
    ws_train: dict = {}
    ws_eval: dict = {}
    for epoch in range(1, max_epochs + 1):
        t0 = time.perf_counter()
        order = substream(seed, "fin-shuffle", epoch).permutation(train_idx.size)
        epoch_loss = np.zeros(mm)
        n_batches = 0
        for lo in range(0, train_idx.size, batch_size):
            batch = train_idx[order[lo : lo + batch_size]]
            if audit is not None and pairs.splits is not None:
                audit.observe("fin-train", pairs.splits[batch])
            preds, caches = bank_forward(models, pairs.x[batch], want_cache=True, ws=ws_train)
            d_preds = np.empty_like(preds)
            for mi in range(mm):
                loss, grad = mse_loss(preds[mi], y[batch, mi])
                if not np.isfinite(loss):
                    raise TrainingDiverged(
                        f"non-finite training loss for {models[mi].feature_type} at epoch {epoch}"
                    )
                epoch_loss[mi] += loss
                d_preds[mi] = grad
            zero_grads(all_params)
            bank_backward(models, d_preds, caches, ws=ws_train)
            adam_step(all_params, lr=lr, weight_decay=weight_decay)
            n_batches += 1
        epoch_loss /= max(1, n_batches)
        val_losses = _bank_eval_loss(models, pairs.x, y, val_idx, batch_size, ws_eval)
        dt = time.perf_counter() - t0
        for mi in range(mm):
            rec = records[mi]
            rec.epochs_run = epoch
            rec.train_loss.append(float(epoch_loss[mi]))
            rec.val_loss.append(float(val_losses[mi]))
            rec.seconds_per_epoch.append(dt)
            if val_losses[mi] < rec.best_val_loss - 1e-12:
                rec.best_val_loss = float(val_losses[mi])
                rec.best_epoch = epoch
                snaps[mi] = _snapshot(models[mi])
                since_best[mi] = 0
            else:
                since_best[mi] += 1
        if all(s >= patience for s in since_best):
            break
    for mi in range(mm):
        _restore(models[mi], snaps[mi])
    return records


def _bank_eval_loss(models, x, y, idx, batch_size, ws):
    mm = len(models)
    if idx.size == 0:
        return np.zeros(mm)
    total = np.zeros(mm)
    count = 0
    for lo in range(0, idx.size, batch_size):
        batch = idx[lo : lo + batch_size]
        preds = bank_forward(models, x[batch], ws=ws)
        total += ((preds - y[batch].T) ** 2).mean(axis=1) * batch.size
        count += batch.size
    return total / count


def train_fin(model: FinModel, pairs: PairBank, max_epochs: int, patience: int, seed: int = 0, **kw):
    """Train one regressor; see `train_fin_bank` for the mechanics."""
    single = PairBank(
        x=pairs.x,
        y=pairs.y if pairs.y.ndim == 2 else pairs.y[:, None],
        window_index=pairs.window_index,
        channel=pairs.channel,
        skipped_windows=pairs.skipped_windows,
        splits=pairs.splits,
    )
    return train_fin_bank([model], single, max_epochs, patience, seed, **kw)[0]


def predict_pairs(models, x: np.ndarray, batch_size: int = 96, ws: dict | None = None) -> np.ndarray:
    """Batched bank inference over pair sequences: x [n, 600] -> [M, n]."""
    shared = ws if ws is not None else {}
    n = x.shape[0]
    out = np.empty((len(models), n))
    for lo in range(0, n, batch_size):
        out[:, lo : lo + batch_size] = bank_forward(models, x[lo : lo + batch_size], ws=shared)
    return out


# ---------------------------------------------------------------------------
# metrics


def eval_r2(pred: np.ndarray, truth: np.ndarray) -> float:
    """Coefficient of determination 1 - SS_res/SS_tot."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.shape != truth.shape or truth.size < 2:
        raise ValueError("eval_r2: need two same-length vectors of length >= 2")
    ss_tot = np.sum((truth - truth.mean()) ** 2)
    if ss_tot == 0.0:
        raise ValueError("eval_r2: truth is constant")
    ss_res = np.sum((truth - pred) ** 2)
    return float(1.0 - ss_res / ss_tot)


def eval_map(pred: np.ndarray, truth: np.ndarray, eps: float = 1e-8) -> float:
    """Mean absolute percentage agreement, 100*(1 - mean(|err|/(|y|+eps))).

    Meant for raw (de-normalized) feature values.
    """
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.shape != truth.shape or truth.size == 0:
        raise ValueError("eval_map: need two same-length non-empty vectors")
    rel = np.abs(pred - truth) / (np.abs(truth) + eps)
    return float(100.0 * (1.0 - rel.mean()))


def r2_per_window(preds: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """R^2 across the 12 channels of each window.

    preds/truth: [n_windows, 12]. Windows whose truth is constant across
    channels yield NaN (callers drop or count them).
    """
    mean = truth.mean(axis=1, keepdims=True)
    ss_tot = np.sum((truth - mean) ** 2, axis=1)
    ss_res = np.sum((truth - preds) ** 2, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 1.0 - ss_res / ss_tot
    out[ss_tot == 0.0] = np.nan
    return out


def imitate(models, window) -> FeatureMatrix:
    """Imitated normalized FeatureMatrix of one window (4 models x 12 ch)."""
    if len(models) != 4:
        raise ValueError("imitate: expected 4 trained models (ENT, RMS, VAR, SSI)")
    samples = window.samples if hasattr(window, "samples") else np.asarray(window)
    x = np.ascontiguousarray(samples.T)  # [12, 600] channels as the batch
    preds = bank_forward(models, x)  # [4, 12]
    return FeatureMatrix(preds, normalized=True)


def imitate_batch(models, samples: np.ndarray, batch_windows: int = 8, ws: dict | None = None) -> np.ndarray:
    """Imitated features for stacked windows: [n, 600, 12] -> [n, 4, 12]."""
    n = samples.shape[0]
    shared = ws if ws is not None else {}
    out = np.empty((n, 4, 12))
    for lo in range(0, n, batch_windows):
        chunk = samples[lo : lo + batch_windows]
        k = chunk.shape[0]
        x = np.ascontiguousarray(chunk.transpose(0, 2, 1)).reshape(k * 12, WINDOW_SAMPLES)
        preds = bank_forward(models, x, ws=shared)  # [4, k*12]
        out[lo : lo + k] = preds.reshape(4, k, 12).transpose(1, 0, 2)
    return out
