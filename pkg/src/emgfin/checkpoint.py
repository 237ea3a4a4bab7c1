"""Bit-exact model persistence.

A checkpoint is a text key=value header (format version, kind, an
architecture descriptor, seed, epochs, feature z-score stats, the tensor
manifest) terminated by `---`, followed by one little-endian float64 blob.
Each trainable parameter stores value, both Adam moments and its step
count, so a round trip reproduces training state exactly; plain buffers
(batch-norm running stats) store value only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .classifier import CnnModel
from .features import FEATURE_TYPES, FeatureStats
from .fin import FinModel

FORMAT_VERSION = 1
MAGIC = "#EMGFIN-CHECKPOINT"

FIN_ARCH = "bilstm(layers=3,hidden=32x2,input=1,seq=600)+dense(64->1)"
CNN_ARCH = "conv3x3(4-32-64-128)+bn+prelu+dropout0.3+gap+dense(128->17)"
KINDS = ("fin-ENT", "fin-RMS", "fin-VAR", "fin-SSI", "cnn-I", "cnn-II", "joint")


class CheckpointError(RuntimeError):
    pass


@dataclass
class TensorEntry:
    name: str
    shape: tuple
    is_param: bool


def _format_floats(arr) -> str:
    return ",".join(repr(float(v)) for v in np.asarray(arr).ravel())


def _parse_floats(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.split(",")], dtype=np.float64)


def save_checkpoint(
    path,
    kind: str,
    arch: str,
    named_params,
    seed: int,
    epochs: int,
    feature_stats: FeatureStats | None = None,
    named_buffers=(),
    extra: dict | None = None,
) -> None:
    """Write params (+ optimizer state) and buffers to one self-described file."""
    if kind not in KINDS:
        raise CheckpointError(f"unknown checkpoint kind {kind!r}")
    lines = [MAGIC, f"format_version={FORMAT_VERSION}", f"kind={kind}", f"arch={arch}",
             f"seed={int(seed)}", f"epochs={int(epochs)}"]
    if feature_stats is not None:
        lines.append(f"fstats_mean={_format_floats(feature_stats.mean)}")
        lines.append(f"fstats_std={_format_floats(feature_stats.std)}")
    for key, val in (extra or {}).items():
        lines.append(f"extra.{key}={val}")
    chunks = []
    n_bytes = 0
    for name, p in named_params:
        shape = "x".join(str(d) for d in p.value.shape) or "1"
        lines.append(f"tensor={name}:{shape}:p")
        for arr in (p.value, p.adam_m, p.adam_v):
            chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        chunks.append(np.float64(p.step_count).astype("<f8").tobytes())
        n_bytes += (3 * p.value.size + 1) * 8
    for name, arr in named_buffers:
        arr = np.asarray(arr, dtype=np.float64)
        shape = "x".join(str(d) for d in arr.shape) or "1"
        lines.append(f"tensor={name}:{shape}:b")
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        n_bytes += arr.size * 8
    lines.append(f"blob_bytes={n_bytes}")
    lines.append("---")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))
        for chunk in chunks:
            fh.write(chunk)


@dataclass
class Checkpoint:
    kind: str
    arch: str
    seed: int
    epochs: int
    feature_stats: FeatureStats | None
    extra: dict
    entries: list
    values: dict  # name -> dict(value=..., adam_m=..., adam_v=..., step=...) or dict(value=...)


def load_checkpoint(path, expected_kind: str | None = None) -> Checkpoint:
    """Parse and validate a checkpoint file."""
    with open(path, "rb") as fh:
        raw = fh.read()
    nl = raw.find(b"\n")
    if nl < 0 or raw[:nl].decode("utf-8", "replace") != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    header_end = raw.find(b"\n---\n")
    if header_end < 0:
        raise CheckpointError(f"{path}: missing header terminator")
    header_lines = raw[nl + 1 : header_end].decode("utf-8").splitlines()
    blob = raw[header_end + 5 :]
    fields = {}
    entries = []
    for line in header_lines:
        key, _, val = line.partition("=")
        if key == "tensor":
            name, shape_s, flag = val.rsplit(":", 2)
            shape = tuple(int(d) for d in shape_s.split("x"))
            entries.append(TensorEntry(name, shape, flag == "p"))
        else:
            fields[key] = val
    version = int(fields.get("format_version", "-1"))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format_version {version} != supported {FORMAT_VERSION}")
    kind = fields.get("kind", "")
    if expected_kind is not None and kind != expected_kind:
        raise CheckpointError(f"{path}: checkpoint kind {kind!r}, expected {expected_kind!r}")
    declared = int(fields.get("blob_bytes", "-1"))
    if declared != len(blob):
        raise CheckpointError(
            f"{path}: blob length {len(blob)} does not match declared {declared} (truncated?)"
        )
    stats = None
    if "fstats_mean" in fields:
        stats = FeatureStats(_parse_floats(fields["fstats_mean"]), _parse_floats(fields["fstats_std"]))
    extra = {k[len("extra."):]: v for k, v in fields.items() if k.startswith("extra.")}
    values = {}
    offset = 0
    for e in entries:
        size = int(np.prod(e.shape))
        if e.is_param:
            need = (3 * size + 1) * 8
        else:
            need = size * 8
        if offset + need > len(blob):
            raise CheckpointError(f"{path}: blob truncated at tensor {e.name!r}")
        if e.is_param:
            value = np.frombuffer(blob, "<f8", size, offset).reshape(e.shape).copy()
            m = np.frombuffer(blob, "<f8", size, offset + size * 8).reshape(e.shape).copy()
            v = np.frombuffer(blob, "<f8", size, offset + 2 * size * 8).reshape(e.shape).copy()
            step = int(np.frombuffer(blob, "<f8", 1, offset + 3 * size * 8)[0])
            values[e.name] = {"value": value, "adam_m": m, "adam_v": v, "step": step}
        else:
            values[e.name] = {"value": np.frombuffer(blob, "<f8", size, offset).reshape(e.shape).copy()}
        offset += need
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes after last tensor")
    return Checkpoint(
        kind=kind,
        arch=fields.get("arch", ""),
        seed=int(fields.get("seed", "0")),
        epochs=int(fields.get("epochs", "0")),
        feature_stats=stats,
        extra=extra,
        entries=entries,
        values=values,
    )


def _apply_params(ck: Checkpoint, named_params, path="<checkpoint>") -> None:
    for name, p in named_params:
        got = ck.values.get(name)
        if got is None or "adam_m" not in got:
            raise CheckpointError(f"{path}: missing parameter tensor {name!r}")
        if got["value"].shape != p.value.shape:
            raise CheckpointError(
                f"{path}: tensor {name!r} shape {got['value'].shape} != model {p.value.shape}"
            )
        p.value[...] = got["value"]
        p.adam_m[...] = got["adam_m"]
        p.adam_v[...] = got["adam_v"]
        p.step_count = got["step"]


# ---------------------------------------------------------------------------
# model-level helpers


def save_fin(path, model: FinModel, stats: FeatureStats, seed: int, epochs: int) -> None:
    save_checkpoint(
        path,
        kind=f"fin-{model.feature_type}",
        arch=FIN_ARCH,
        named_params=model.named_params(),
        seed=seed,
        epochs=epochs,
        feature_stats=stats,
        extra={"feature": model.feature_type},
    )


def load_fin(path, feature_type: str):
    ck = load_checkpoint(path, expected_kind=f"fin-{feature_type}")
    if ck.arch != FIN_ARCH:
        raise CheckpointError(f"{path}: architecture {ck.arch!r} != {FIN_ARCH!r}")
    model = FinModel(feature_type)
    _apply_params(ck, model.named_params(), path)
    return model, ck


def _cnn_buffers(model: CnnModel):
    out = []
    for i in range(3):
        out.append((f"bn{i}.running_mean", model.bn[i].running_mean))
        out.append((f"bn{i}.running_var", model.bn[i].running_var))
        out.append((f"bn{i}.batches_tracked", np.array([model.bn[i].batches_tracked], dtype=np.float64)))
    return out


def _restore_cnn_buffers(ck: Checkpoint, model: CnnModel, prefix="", path="<checkpoint>") -> None:
    for i in range(3):
        for attr, key in (("running_mean", f"{prefix}bn{i}.running_mean"),
                          ("running_var", f"{prefix}bn{i}.running_var")):
            got = ck.values.get(key)
            if got is None:
                raise CheckpointError(f"{path}: missing buffer {key!r}")
            getattr(model.bn[i], attr)[...] = got["value"]
        got = ck.values.get(f"{prefix}bn{i}.batches_tracked")
        if got is None:
            raise CheckpointError(f"{path}: missing buffer {prefix}bn{i}.batches_tracked")
        model.bn[i].batches_tracked = int(got["value"][0])


def save_cnn(path, model: CnnModel, kind: str, stats: FeatureStats, seed: int, epochs: int,
             extra: dict | None = None) -> None:
    if kind not in ("cnn-I", "cnn-II"):
        raise CheckpointError(f"save_cnn: bad kind {kind!r}")
    save_checkpoint(
        path,
        kind=kind,
        arch=CNN_ARCH,
        named_params=model.named_params(),
        seed=seed,
        epochs=epochs,
        feature_stats=stats,
        named_buffers=_cnn_buffers(model),
        extra=extra,
    )


def load_cnn(path, kind: str):
    ck = load_checkpoint(path, expected_kind=kind)
    if ck.arch != CNN_ARCH:
        raise CheckpointError(f"{path}: architecture {ck.arch!r} != {CNN_ARCH!r}")
    model = CnnModel()
    _apply_params(ck, model.named_params(), path)
    _restore_cnn_buffers(ck, model, path=path)
    return model, ck


def save_joint(path, fins, cnn: CnnModel, stats: FeatureStats, seed: int, epochs: int,
               extra: dict | None = None) -> None:
    """One checkpoint holding all four feature regressors plus the classifier."""
    named = []
    for model in fins:
        for name, p in model.named_params():
            named.append((f"fin-{model.feature_type}.{name}", p))
    for name, p in cnn.named_params():
        named.append((f"cnn.{name}", p))
    buffers = [(f"cnn.{name}", arr) for name, arr in _cnn_buffers(cnn)]
    save_checkpoint(
        path,
        kind="joint",
        arch=f"{FIN_ARCH}|{CNN_ARCH}",
        named_params=named,
        seed=seed,
        epochs=epochs,
        feature_stats=stats,
        named_buffers=buffers,
        extra=extra,
    )


def load_joint(path):
    ck = load_checkpoint(path, expected_kind="joint")
    fins = []
    for f in FEATURE_TYPES:
        model = FinModel(f)
        _apply_params(
            ck, [(f"fin-{f}.{name}", p) for name, p in model.named_params()], path
        )
        fins.append(model)
    cnn = CnnModel()
    _apply_params(ck, [(f"cnn.{name}", p) for name, p in cnn.named_params()], path)
    _restore_cnn_buffers(ck, cnn, prefix="cnn.", path=path)
    return fins, cnn, ck
