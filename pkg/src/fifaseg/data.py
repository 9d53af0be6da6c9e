"""File formats, length-model estimation and the synthetic instance generator.

Formats
-------
probabilities, csv
    One frame per line, comma-separated class probabilities.
probabilities, packed_f32
    ``b"SEGP"``, little-endian u32 ``T``, u32 ``C``, then ``T*C`` little-endian
    f32 values in row-major order. Class names live in a sidecar JSON list.
segmentation
    One integer class index per line.
transcript
    Space-separated integer class indices on one line.
length model
    JSON object ``{"family", "expected", "scale"}``.
metric report
    JSON object with keys ``mof, mof_bg, iou, iod, edit, f1_10, f1_25, f1_50``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import (
    InfeasibleError,
    LengthFamily,
    LengthModel,
    ProbMatrix,
    ValidationError,
    round_lengths,
    to_framewise,
    to_segmentwise,
)

MAGIC = b"SEGP"
_HEADER = struct.Struct("<4sII")


class FormatError(ValidationError):
    kind = "validation"


@dataclass
class ProblemInstance:
    probs: ProbMatrix
    gt: np.ndarray | None = None
    transcript: np.ndarray | None = None
    video_id: str = ""

    def __post_init__(self):
        if self.gt is not None and len(self.gt) != self.probs.T:
            raise ValidationError(f"ground truth has {len(self.gt)} frames, probabilities {self.probs.T}")


@dataclass(frozen=True)
class SynthConfig:
    T: int = 200
    N: int = 5
    C: int = 10
    noise_temp: float = 1.0
    confusion_prob: float = 0.05
    length_dirichlet_alpha: float = 5.0
    seed: int = 0
    # Optional per-class multipliers on the Dirichlet concentration; a class
    # with weight w gets on average w times the share of a weight-1 class.
    class_length_weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.C < 2:
            raise ValidationError("need at least two classes")
        if self.N < 1:
            raise ValidationError("need at least one segment")
        if self.T < self.N:
            raise InfeasibleError(f"{self.N} segments do not fit into {self.T} frames")
        if self.noise_temp < 0:
            raise ValidationError("noise_temp must be >= 0")
        if not 0 <= self.confusion_prob <= 1:
            raise ValidationError("confusion_prob must lie in [0, 1]")
        if not self.length_dirichlet_alpha > 0:
            raise ValidationError("length_dirichlet_alpha must be positive")
        if self.class_length_weights is not None:
            if len(self.class_length_weights) != self.C or min(self.class_length_weights) <= 0:
                raise ValidationError("class_length_weights needs C positive entries")


def synth_instance(cfg: SynthConfig, video_id: str | None = None) -> ProblemInstance:
    rng = np.random.default_rng(cfg.seed)
    labels = np.empty(cfg.N, dtype=np.int64)
    labels[0] = rng.integers(cfg.C)
    for n in range(1, cfg.N):
        k = rng.integers(cfg.C - 1)
        labels[n] = k + (k >= labels[n - 1])

    weights = np.ones(cfg.C) if cfg.class_length_weights is None else np.asarray(cfg.class_length_weights, float)
    share = rng.dirichlet(cfg.length_dirichlet_alpha * weights[labels])
    # Dirichlet draws can underflow to exactly zero for tiny concentrations.
    lengths = round_lengths(np.maximum(share, 1e-12) * cfg.T, cfg.T)
    gt = to_framewise(labels, lengths)

    if cfg.noise_temp == 0:
        probs = np.zeros((cfg.T, cfg.C))
        probs[np.arange(cfg.T), gt] = 1.0
    else:
        logits = np.zeros((cfg.T, cfg.C))
        logits[np.arange(cfg.T), gt] = 1.0 / cfg.noise_temp
        logits -= logits.max(axis=1, keepdims=True)
        probs = np.exp(logits)
        probs /= probs.sum(axis=1, keepdims=True)

    corrupt = np.flatnonzero(rng.random(cfg.T) < cfg.confusion_prob)
    if corrupt.size:
        other = rng.integers(cfg.C - 1, size=corrupt.size)
        other = other + (other >= gt[corrupt])
        a = probs[corrupt, gt[corrupt]].copy()
        probs[corrupt, gt[corrupt]] = probs[corrupt, other]
        probs[corrupt, other] = a

    names = tuple(f"a{c}" for c in range(cfg.C))
    vid = video_id if video_id is not None else f"synth-{cfg.seed}"
    return ProblemInstance(ProbMatrix(probs, names), gt, labels, vid)


def estimate_length_model(
    train: Iterable[Sequence[int]],
    family=LengthFamily.POISSON,
    num_classes: int | None = None,
    required: Iterable[int] | None = None,
) -> LengthModel:
    """Mean segment length per class over a set of frame-wise labelings.

    Classes in ``required`` (default: all ``num_classes``) must occur at
    least once. Classes never seen and not required get the global mean.
    """
    totals: dict[int, int] = {}
    counts: dict[int, int] = {}
    for seg in train:
        labels, lengths = to_segmentwise(seg)
        for c, ell in zip(labels.tolist(), lengths.tolist()):
            totals[c] = totals.get(c, 0) + ell
            counts[c] = counts.get(c, 0) + 1
    if not counts:
        raise ValidationError("no training segmentations")
    if num_classes is None:
        num_classes = max(counts) + 1
    required = range(num_classes) if required is None else list(required)
    missing = sorted(c for c in required if c not in counts)
    if missing:
        raise ValidationError(f"classes without training segments: {missing}")
    fallback = sum(totals.values()) / sum(counts.values())
    expected = np.array([totals[c] / counts[c] if c in counts else fallback for c in range(num_classes)])
    return LengthModel(LengthFamily(family), expected)


# -- probabilities -------------------------------------------------------------


def write_packed(path, probs: np.ndarray) -> None:
    arr = np.ascontiguousarray(probs, dtype="<f4")
    T, C = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, T, C))
        fh.write(arr.tobytes())


def read_packed(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, T, C = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    body = raw[_HEADER.size:]
    if len(body) != 4 * T * C:
        raise FormatError(f"{path}: expected {4 * T * C} data bytes for {T}x{C}, found {len(body)}")
    return np.frombuffer(body, dtype="<f4").reshape(T, C)


def _read_csv(path) -> np.ndarray:
    rows = []
    width = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = [float(v) for v in line.split(",")]
            except ValueError:
                raise FormatError(f"{path}:{lineno}: not a comma-separated list of numbers") from None
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise FormatError(f"{path}:{lineno}: expected {width} values, found {len(row)}")
            rows.append(row)
    if not rows:
        raise FormatError(f"{path}: no rows")
    return np.array(rows)


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".classes.json")


def load_probs(path, format: str = "csv", class_names: Sequence[str] | None = None) -> ProbMatrix:
    if format == "csv":
        arr = _read_csv(path)
    elif format in ("packed_f32", "packed"):
        arr = read_packed(path)
    else:
        raise ValidationError(f"unknown probability format {format!r}")
    if class_names is None and sidecar_path(path).exists():
        class_names = json.loads(sidecar_path(path).read_text(encoding="utf-8"))
    try:
        return ProbMatrix(arr, tuple(class_names or ()))
    except ValidationError as err:
        raise FormatError(f"{path}: {err}") from None


def save_probs(path, pm, format: str = "packed_f32", sidecar: bool = True) -> None:
    probs = pm.probs if isinstance(pm, ProbMatrix) else np.asarray(pm)
    if format == "csv":
        with open(path, "w", encoding="utf-8") as fh:
            for row in probs:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
    elif format in ("packed_f32", "packed"):
        write_packed(path, probs)
    else:
        raise ValidationError(f"unknown probability format {format!r}")
    if sidecar and isinstance(pm, ProbMatrix):
        sidecar_path(path).write_text(json.dumps(list(pm.class_names)), encoding="utf-8")


# -- label files ---------------------------------------------------------------


def _parse_int(token: str, path, lineno: int) -> int:
    try:
        value = int(token)
    except ValueError:
        raise FormatError(f"{path}:{lineno}: {token!r} is not an integer label") from None
    if value < 0:
        raise FormatError(f"{path}:{lineno}: negative label {value}")
    return value


def save_segmentation(path, frame_labels) -> None:
    Path(path).write_text("".join(f"{int(v)}\n" for v in frame_labels), encoding="utf-8")


def load_segmentation(path) -> np.ndarray:
    labels = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            token = line.strip()
            if not token:
                continue
            labels.append(_parse_int(token, path, lineno))
    if not labels:
        raise FormatError(f"{path}: empty segmentation")
    return np.array(labels, dtype=np.int64)


def save_transcript(path, labels) -> None:
    Path(path).write_text(" ".join(str(int(v)) for v in labels) + "\n", encoding="utf-8")


def load_transcript(path) -> np.ndarray:
    labels = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            labels.extend(_parse_int(tok, path, lineno) for tok in line.split())
    if not labels:
        raise FormatError(f"{path}: empty transcript")
    return np.array(labels, dtype=np.int64)


def save_length_model(path, model: LengthModel) -> None:
    doc = {
        "family": model.family.value,
        "expected": [float(v) for v in model.expected],
        "scale": [float(v) for v in model.scale],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_length_model(path) -> LengthModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise FormatError(f"{path}:{err.lineno}: invalid JSON ({err.msg})") from None
    if not isinstance(doc, dict) or "expected" not in doc:
        raise FormatError(f"{path}: expected an object with an 'expected' list")
    try:
        return LengthModel(doc.get("family", "poisson"), doc["expected"], doc.get("scale"))
    except (ValidationError, ValueError, TypeError) as err:
        raise FormatError(f"{path}: {err}") from None


def save_report(path, report) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")


def load_report(path):
    from .metrics import MetricReport

    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise FormatError(f"{path}:{err.lineno}: invalid JSON ({err.msg})") from None
    try:
        return MetricReport.from_dict(doc)
    except (KeyError, TypeError, ValueError) as err:
        raise FormatError(f"{path}: {err}") from None


# -- instance directories --------------------------------------------------------


def save_instance(directory, inst: ProblemInstance) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_probs(d / f"{inst.video_id}.probs", inst.probs, "packed_f32")
    if inst.gt is not None:
        save_segmentation(d / f"{inst.video_id}.gt", inst.gt)
    if inst.transcript is not None:
        save_transcript(d / f"{inst.video_id}.transcript", inst.transcript)


def load_instances(directory) -> list[ProblemInstance]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"{d}: not a directory")
    out = []
    for p in sorted(d.glob("*.probs")):
        vid = p.name[: -len(".probs")]
        gt_path, tr_path = d / f"{vid}.gt", d / f"{vid}.transcript"
        out.append(ProblemInstance(
            load_probs(p, "packed_f32"),
            load_segmentation(gt_path) if gt_path.exists() else None,
            load_transcript(tr_path) if tr_path.exists() else None,
            vid,
        ))
    return out
