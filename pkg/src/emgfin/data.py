"""Recordings, channel normalization, sliding windows and split assignment.

Data model mirrors a 12-electrode, 2 kHz acquisition: each subject has one
continuous multichannel stream with per-sample movement (`stimulus`,
0 = rest, 1..17 = movement) and repetition labels (0 = rest, 1..6).
Windows are 600 samples (300 ms) advanced in 20-sample (10 ms) strides.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .rng import substream

N_CHANNELS = 12
SAMPLE_RATE = 2000
WINDOW_SAMPLES = 600
STRIDE_SAMPLES = 20

SPLIT_PRETRAIN = "pretrain"
SPLIT_FINETUNE = "finetune"
SPLIT_TEST = "test"
SPLIT_NAMES = (SPLIT_PRETRAIN, SPLIT_FINETUNE, SPLIT_TEST)

CSV_COLUMNS = [f"ch{i}" for i in range(1, 13)] + ["stimulus", "repetition"]


class CsvFormatError(ValueError):
    """Raised when an input file violates the recording CSV contract."""


@dataclass
class Recording:
    """One subject's continuous stream: channels [12, N] plus labels [N]."""

    subject_id: int
    sample_rate: int
    channels: np.ndarray
    stimulus: np.ndarray
    repetition: np.ndarray

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.float64)
        self.stimulus = np.asarray(self.stimulus, dtype=np.int64)
        self.repetition = np.asarray(self.repetition, dtype=np.int64)
        n = self.channels.shape[1] if self.channels.ndim == 2 else -1
        if self.channels.ndim != 2 or self.channels.shape[0] != N_CHANNELS:
            raise ValueError(f"Recording: channels must be [{N_CHANNELS}, N], got {self.channels.shape}")
        if self.stimulus.shape != (n,) or self.repetition.shape != (n,):
            raise ValueError("Recording: stimulus/repetition lengths must match channel samples")

    @property
    def n_samples(self) -> int:
        return self.channels.shape[1]


@dataclass
class Window:
    """One labelled 600x12 slice of a recording."""

    samples: np.ndarray  # [600, 12]
    label: int
    subject_id: int
    repetition: int
    start_index: int


@dataclass
class ChannelStats:
    mean: np.ndarray  # [12]
    std: np.ndarray  # [12]


def zscore_channels(rec: Recording, stats: ChannelStats | None = None):
    """Per-channel (x - mean) / std; returns (new Recording, stats used).

    Without precomputed stats they are fitted on this recording (population
    std). A zero-variance channel is an error naming the channel.
    """
    if stats is None:
        if rec.n_samples < 2:
            raise ValueError("zscore_channels: need at least 2 samples to fit stats")
        mean = rec.channels.mean(axis=1)
        std = rec.channels.std(axis=1)
        for ci, s in enumerate(std):
            if s == 0.0:
                raise ValueError(f"zscore_channels: channel ch{ci + 1} has zero variance")
        stats = ChannelStats(mean, std)
    normalized = (rec.channels - stats.mean[:, None]) / stats.std[:, None]
    out = Recording(rec.subject_id, rec.sample_rate, normalized, rec.stimulus, rec.repetition)
    return out, stats


class WindowSet:
    """Columnar window index over one or more recordings.

    Window sample data stays in the recordings; `gather` materializes
    [n, 600, 12] blocks on demand. `candidate_count` is the number of
    stride positions before rest/purity filtering.
    """

    def __init__(self, recordings, rec_index, start, label, repetition, subject, candidate_count):
        self.recordings = list(recordings)
        self.rec_index = np.asarray(rec_index, dtype=np.int64)
        self.start = np.asarray(start, dtype=np.int64)
        self.label = np.asarray(label, dtype=np.int64)
        self.repetition = np.asarray(repetition, dtype=np.int64)
        self.subject = np.asarray(subject, dtype=np.int64)
        self.candidate_count = int(candidate_count)
        self.split = assign_split_arrays(self.subject, self.repetition)

    def __len__(self) -> int:
        return self.start.size

    def window(self, i: int) -> Window:
        rec = self.recordings[self.rec_index[i]]
        s = self.start[i]
        return Window(
            samples=rec.channels[:, s : s + WINDOW_SAMPLES].T.copy(),
            label=int(self.label[i]),
            subject_id=int(self.subject[i]),
            repetition=int(self.repetition[i]),
            start_index=int(s),
        )

    def gather(self, indices) -> np.ndarray:
        indices = np.asarray(indices, dtype=np.int64)
        out = np.empty((indices.size, WINDOW_SAMPLES, N_CHANNELS))
        for k, i in enumerate(indices):
            rec = self.recordings[self.rec_index[i]]
            s = self.start[i]
            out[k] = rec.channels[:, s : s + WINDOW_SAMPLES].T
        return out

    def indices_of_split(self, split: str) -> np.ndarray:
        if split not in SPLIT_NAMES:
            raise ValueError(f"unknown split {split!r}")
        return np.nonzero(self.split == split)[0]

    @classmethod
    def concat(cls, sets):
        sets = list(sets)
        recordings = []
        rec_index = []
        offset = 0
        for s in sets:
            recordings.extend(s.recordings)
            rec_index.append(s.rec_index + offset)
            offset += len(s.recordings)
        return cls(
            recordings,
            np.concatenate(rec_index) if rec_index else np.zeros(0, dtype=np.int64),
            np.concatenate([s.start for s in sets]),
            np.concatenate([s.label for s in sets]),
            np.concatenate([s.repetition for s in sets]),
            np.concatenate([s.subject for s in sets]),
            sum(s.candidate_count for s in sets),
        )


def slide_windows(rec: Recording) -> WindowSet:
    """Segment one normalized recording into labelled windows.

    Start indices 0, 20, 40, ... N-600. The window label is the majority
    per-sample stimulus; windows with rest majority or majority fraction
    below 0.5 are discarded. Repetition is the majority per-sample
    repetition.
    """
    n = rec.n_samples
    if n < WINDOW_SAMPLES:
        return WindowSet([rec], [], [], [], [], [], 0)
    starts = np.arange(0, n - WINDOW_SAMPLES + 1, STRIDE_SAMPLES, dtype=np.int64)
    n_cand = starts.size
    # per-window stimulus/repetition histograms via one bincount sweep
    max_stim = int(rec.stimulus.max(initial=0)) + 1
    max_rep = int(rec.repetition.max(initial=0)) + 1
    keep_start, keep_label, keep_rep = [], [], []
    for s in starts:
        stim = rec.stimulus[s : s + WINDOW_SAMPLES]
        counts = np.bincount(stim, minlength=max_stim)
        label = int(counts.argmax())
        if label == 0 or counts[label] / WINDOW_SAMPLES < 0.5:
            continue
        rep_counts = np.bincount(rec.repetition[s : s + WINDOW_SAMPLES], minlength=max_rep)
        keep_start.append(int(s))
        keep_label.append(label)
        keep_rep.append(int(rep_counts.argmax()))
    k = len(keep_start)
    return WindowSet(
        [rec],
        np.zeros(k, dtype=np.int64),
        keep_start,
        keep_label,
        keep_rep,
        np.full(k, rec.subject_id, dtype=np.int64),
        n_cand,
    )


def assign_split_arrays(subject: np.ndarray, repetition: np.ndarray) -> np.ndarray:
    """Vectorized split assignment; see `assign_split`."""
    subject = np.asarray(subject)
    repetition = np.asarray(repetition)
    out = np.empty(subject.shape, dtype=object)
    is_test = (repetition == 2) | (repetition == 5)
    is_pre = (subject <= 25) & np.isin(repetition, (1, 3, 4))
    out[:] = SPLIT_FINETUNE
    out[is_pre] = SPLIT_PRETRAIN
    out[is_test] = SPLIT_TEST
    return out


def assign_split(window: Window) -> str:
    """Three-way split by (subject, repetition).

    Repetitions 2 and 5 of every subject are the test set. For subjects
    1-25, repetitions 1, 3, 4 pre-train and repetition 6 fine-tunes; for
    subjects 26-40 repetitions 1, 3, 4, 6 all fine-tune.
    """
    rep = window.repetition
    subj = window.subject_id
    if not 1 <= rep <= 6:
        raise ValueError(f"assign_split: repetition {rep} outside 1..6")
    if not 1 <= subj <= 40:
        raise ValueError(f"assign_split: subject {subj} outside 1..40")
    if rep in (2, 5):
        return SPLIT_TEST
    if subj <= 25 and rep in (1, 3, 4):
        return SPLIT_PRETRAIN
    return SPLIT_FINETUNE


def stratified_cap(labels: np.ndarray, cap: int, rng: np.random.Generator) -> np.ndarray:
    """Positions of a label-stratified subset of size <= cap (seeded)."""
    labels = np.asarray(labels)
    if cap <= 0 or labels.size <= cap:
        return np.arange(labels.size)
    classes = np.unique(labels)
    per = max(1, cap // classes.size)
    chosen = []
    for cls in classes:
        cls_pos = np.nonzero(labels == cls)[0]
        k = min(per, cls_pos.size)
        chosen.append(rng.choice(cls_pos, size=k, replace=False))
    out = np.sort(np.concatenate(chosen))
    if out.size > cap:
        out = out[np.sort(rng.choice(out.size, size=cap, replace=False))]
    return out


def subsample_finetune(ws: WindowSet, fraction: float, seed: int):
    """Stratified random subset of the fine-tuning windows.

    Keeps round(fraction * count) windows per class (uniform, without
    replacement, deterministic under seed). Returns (selected fine-tune
    indices into ws, warnings).
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"subsample_finetune: fraction must be in (0, 1], got {fraction}")
    idx = ws.indices_of_split(SPLIT_FINETUNE)
    warnings = []
    if fraction == 1.0:
        return idx, warnings
    rng = substream(seed, "subsample-finetune")
    chosen = []
    for cls in np.unique(ws.label[idx]):
        cls_idx = idx[ws.label[idx] == cls]
        k = int(np.floor(fraction * cls_idx.size + 0.5))
        if k == 0:
            warnings.append(
                f"fraction {fraction} leaves 0 of {cls_idx.size} fine-tune windows for class {cls}"
            )
            continue
        chosen.append(rng.choice(cls_idx, size=k, replace=False))
    if not chosen:
        return np.zeros(0, dtype=np.int64), warnings
    return np.sort(np.concatenate(chosen)), warnings


# ---------------------------------------------------------------------------
# synthetic recordings


def _class_amplitude(cls: int, n_classes: int) -> np.ndarray:
    """Per-channel amplitude bump centred at a class-specific electrode."""
    centre = 12.0 * (cls - 1) / n_classes
    ch = np.arange(N_CHANNELS, dtype=np.float64)
    dist = np.minimum(np.abs(ch - centre), N_CHANNELS - np.abs(ch - centre))
    return 0.3 + 1.7 * np.exp(-0.5 * (dist / 1.5) ** 2)


def _smooth(noise: np.ndarray, width: int) -> np.ndarray:
    """Moving average along the last axis, rescaled to keep unit variance."""
    if width <= 1:
        return noise
    kernel = np.ones(width) / np.sqrt(width)
    out = np.empty_like(noise)
    for c in range(noise.shape[0]):
        out[c] = np.convolve(noise[c], kernel, mode="same")
    return out


def synth_generate(
    n_subjects: int,
    n_classes: int,
    n_reps: int = 6,
    seed: int = 0,
    burst_seconds: float = 5.0,
    rest_seconds: float = 3.0,
    sample_rate: int = SAMPLE_RATE,
):
    """Deterministic synthetic recordings with separable class signatures.

    Per (subject, class, repetition): a movement burst followed by rest.
    Class k drives a channel amplitude bump, a class-specific smoothing
    bandwidth and spike density (so histogram entropy varies by class);
    each subject applies a global gain, and sensor noise rides on top.
    An onset/offset envelope makes features vary within a burst.
    """
    if n_classes < 2:
        raise ValueError("synth_generate: need at least 2 classes")
    if not 1 <= n_classes <= 17:
        raise ValueError("synth_generate: n_classes must be in 2..17")
    burst_n = int(round(burst_seconds * sample_rate))
    rest_n = int(round(rest_seconds * sample_rate))
    seg_n = burst_n + rest_n
    total_n = n_classes * n_reps * seg_n
    envelope = np.ones(burst_n)
    ramp = max(1, burst_n // 5)
    envelope[:ramp] = np.linspace(0.5, 1.0, ramp)
    envelope[-ramp:] = np.linspace(1.0, 0.5, ramp)
    recordings = []
    for subj in range(1, n_subjects + 1):
        rng = substream(seed, "synth", subj)
        gain = 0.7 + 0.6 * rng.random()
        channels = np.empty((N_CHANNELS, total_n))
        stimulus = np.zeros(total_n, dtype=np.int64)
        repetition = np.zeros(total_n, dtype=np.int64)
        pos = 0
        for cls in range(1, n_classes + 1):
            amp = _class_amplitude(cls, n_classes)
            smooth_width = 1 + 2 * ((cls - 1) % 4)
            # saturation strength shapes the amplitude histogram (near-linear
            # -> Gaussian-like, hard -> bimodal), so window entropy tracks a
            # bulk waveform property the regressors can actually see
            sat = 0.3 + 2.7 * (cls - 1) / max(1, n_classes - 1)
            for rep in range(1, n_reps + 1):
                base = _smooth(rng.standard_normal((N_CHANNELS, burst_n)), smooth_width)
                shaped = np.tanh(sat * base)
                shaped /= shaped.std(axis=1, keepdims=True)
                burst = gain * amp[:, None] * envelope[None, :] * shaped
                burst += 0.05 * rng.standard_normal((N_CHANNELS, burst_n))
                channels[:, pos : pos + burst_n] = burst
                stimulus[pos : pos + burst_n] = cls
                repetition[pos : pos + burst_n] = rep
                pos += burst_n
                channels[:, pos : pos + rest_n] = 0.05 * rng.standard_normal((N_CHANNELS, rest_n))
                pos += rest_n
        recordings.append(Recording(subj, sample_rate, channels, stimulus, repetition))
    return recordings


# ---------------------------------------------------------------------------
# CSV contract: header ch1..ch12,stimulus,repetition; one row per sample


def load_csv(path) -> Recording:
    """Parse one `subject_<id>.csv` recording; errors cite the data row."""
    path = str(path)
    name = path.rsplit("/", 1)[-1]
    if not (name.startswith("subject_") and name.endswith(".csv")):
        raise CsvFormatError(f"{name}: file name must match subject_<id>.csv")
    try:
        subject_id = int(name[len("subject_") : -len(".csv")])
    except ValueError:
        raise CsvFormatError(f"{name}: cannot parse subject id from file name") from None
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except Exception as exc:
        raise CsvFormatError(f"{name}: unreadable CSV ({exc})") from None
    if list(frame.columns) != CSV_COLUMNS:
        missing = [c for c in CSV_COLUMNS if c not in frame.columns]
        raise CsvFormatError(f"{name}: bad header; missing columns {missing}" if missing
                             else f"{name}: bad header {list(frame.columns)}")
    n = len(frame)
    values = np.empty((n, len(CSV_COLUMNS)))
    for col_i, col in enumerate(CSV_COLUMNS):
        converted = pd.to_numeric(frame[col], errors="coerce")
        bad = np.nonzero(converted.isna().to_numpy())[0]
        if bad.size:
            raise CsvFormatError(
                f"{name}: non-numeric value {frame[col].iloc[bad[0]]!r} in column "
                f"{col} on row {int(bad[0]) + 1}"
            )
        values[:, col_i] = converted.to_numpy(dtype=np.float64)
    stim = values[:, 12]
    rep = values[:, 13]
    for col_name, arr, hi in (("stimulus", stim, 17), ("repetition", rep, 6)):
        if n and (np.any(arr != np.round(arr))):
            bad = int(np.nonzero(arr != np.round(arr))[0][0])
            raise CsvFormatError(f"{name}: non-integer {col_name} on row {bad + 1}")
        if n and (arr.min() < 0 or arr.max() > hi):
            bad = int(np.nonzero((arr < 0) | (arr > hi))[0][0])
            raise CsvFormatError(
                f"{name}: {col_name} value {arr[bad]:g} out of range [0, {hi}] on row {bad + 1}"
            )
    return Recording(
        subject_id=subject_id,
        sample_rate=SAMPLE_RATE,
        channels=values[:, :12].T.copy(),
        stimulus=stim.astype(np.int64),
        repetition=rep.astype(np.int64),
    )


def save_csv(rec: Recording, path) -> None:
    """Write a recording in the CSV contract format (LF, 6-decimal floats)."""
    frame = pd.DataFrame(rec.channels.T, columns=CSV_COLUMNS[:12])
    frame["stimulus"] = rec.stimulus
    frame["repetition"] = rec.repetition
    frame.to_csv(path, index=False, float_format="%.6f", lineterminator="\n")


def load_directory(data_dir, subjects=None):
    """Load every subject_<id>.csv under data_dir (optionally filtered)."""
    import os

    names = sorted(n for n in os.listdir(data_dir) if n.startswith("subject_") and n.endswith(".csv"))
    if not names:
        raise CsvFormatError(f"{data_dir}: no subject_<id>.csv files found")
    recs = []
    for n in names:
        rec = load_csv(os.path.join(data_dir, n))
        if subjects is None or rec.subject_id in subjects:
            recs.append(rec)
    return recs
