"""Experiment configuration: one flat dataclass, overridable from a flat
`key = value` text file and CLI flags."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

EXPERIMENTS = ("exp1-fin", "exp2-horizon", "exp3-cnn", "exp4-finetune")
VALID_HORIZONS_MS = (0, 50, 100, 150, 200, 250, 300)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str = "exp1-fin"
    seed: int = 0
    data_dir: str = ""  # empty -> synthetic recordings
    out_dir: str = "out"
    checkpoint_dir: str = ""  # reuse pretrained checkpoints when set
    subjects: str = ""  # filter, e.g. "1-4" or "1,3,7-9"

    # synthetic data
    synth_subjects: int = 4
    synth_classes: int = 5
    synth_reps: int = 6
    synth_burst_seconds: float = 5.0
    synth_rest_seconds: float = 3.0

    # forward-in-time prediction
    horizon_ms: int = 0
    sweep_horizons_ms: str = "50,100,150,200,250,300"

    # fine-tuning data budget
    finetune_fraction: float = 1.0
    sweep_fractions: str = "0.2,0.4,0.6,0.8,1.0"

    # optimizer
    learning_rate: float = 1e-3
    weight_decay: float = 2e-5

    # feature-imitation training
    fin_batch_size: int = 32
    fin_max_epochs: int = 50
    fin_patience: int = 3
    fin_val_fraction: float = 0.1
    fin_max_train_windows: int = 96  # 12 channel pairs per window; 0 = all
    fin_max_eval_windows: int = 64  # R2/MAP evaluation windows; 0 = all

    # classifier training
    cnn_batch_size: int = 128
    cnn_max_epochs: int = 40
    cnn_patience: int = 5
    cnn_val_fraction: float = 0.1
    cap_windows_per_subject_split: int = 300  # classifier pools; 0 = all
    stats_max_windows: int = 4096  # feature z-score fitting subsample; 0 = all

    # joint fine-tuning
    joint_epochs: int = 1
    joint_batch_windows: int = 8
    joint_max_windows_per_subject: int = 48  # 0 = all
    joint_random_encoder: bool = False  # baseline: random-init encoder

    # chain evaluation
    eval_max_windows_per_subject: int = 64  # 0 = all

    def validate(self) -> "ExperimentConfig":
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if self.horizon_ms not in VALID_HORIZONS_MS:
            raise ConfigError(f"horizon_ms must be one of {VALID_HORIZONS_MS}, got {self.horizon_ms}")
        if not 0.0 < self.finetune_fraction <= 1.0:
            raise ConfigError(f"finetune_fraction must be in (0, 1], got {self.finetune_fraction}")
        for h in self.horizon_list():
            if h not in VALID_HORIZONS_MS:
                raise ConfigError(f"sweep_horizons_ms contains invalid horizon {h}")
        for f in self.fraction_list():
            if not 0.0 < f <= 1.0:
                raise ConfigError(f"sweep_fractions contains invalid fraction {f}")
        if self.synth_classes < 2 or self.synth_classes > 17:
            raise ConfigError("synth_classes must be in 2..17")
        return self

    def horizon_list(self):
        return [int(v) for v in self.sweep_horizons_ms.split(",") if v.strip() != ""]

    def fraction_list(self):
        return [float(v) for v in self.sweep_fractions.split(",") if v.strip() != ""]

    def subject_filter(self):
        """Parse the `subjects` range expression into a set (None = all)."""
        if not self.subjects.strip():
            return None
        out = set()
        for part in self.subjects.split(","):
            part = part.strip()
            if "-" in part:
                lo, hi = part.split("-", 1)
                out.update(range(int(lo), int(hi) + 1))
            elif part:
                out.add(int(part))
        return out

    def to_dict(self) -> dict:
        return asdict(self)


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(name: str, raw: str):
    typ = _FIELD_TYPES[name]
    raw = raw.strip()
    if typ == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: cannot parse boolean from {raw!r}")
    if typ == "int":
        return int(raw)
    if typ == "float":
        return float(raw)
    return raw


def parse_config_file(path) -> dict:
    """Read a flat `key = value` file (# comments, blank lines allowed)."""
    overrides = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value, got {line!r}")
            key, _, val = line.partition("=")
            key = key.strip()
            if key not in _FIELD_TYPES:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            overrides[key] = _coerce(key, val)
    return overrides


def build_config(config_path=None, **overrides) -> ExperimentConfig:
    """Config file values first, explicit keyword overrides on top."""
    merged = {}
    if config_path:
        merged.update(parse_config_file(config_path))
    for key, val in overrides.items():
        if val is None:
            continue
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        merged[key] = val
    return ExperimentConfig(**merged).validate()
