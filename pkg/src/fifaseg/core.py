"""Shared domain types and representation conversions.

A segmentation can be held frame-wise (one class index per frame) or
segment-wise (a transcript of class indices plus one length per segment).
Transcripts, length configurations and frame-wise segmentations are plain
1-D numpy arrays; the helpers below validate and convert between them.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

PROB_FLOOR = 1e-8
ROW_SUM_TOL = 1e-4


class SegmentationError(Exception):
    """Base class for all errors raised by this package."""

    kind = "runtime"


class ValidationError(SegmentationError, ValueError):
    kind = "validation"


class InfeasibleError(SegmentationError, ValueError):
    kind = "infeasible"


# Aliases documenting intent; all are 1-D numpy arrays.
Transcript = np.ndarray  # int, shape (N,)
LengthConfig = np.ndarray  # float or int, shape (N,)
Segmentation = np.ndarray  # int, shape (T,)


class LengthFamily(str, enum.Enum):
    POISSON = "poisson"
    LAPLACE = "laplace"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class ProbMatrix:
    """Frame-wise class probabilities, shape ``(T, C)``.

    Rows are validated to sum to one (within ``ROW_SUM_TOL``), then floored
    at ``floor`` so that ``-log p`` is finite. Only rows touched by the floor
    are renormalized; untouched rows are stored verbatim.
    """

    probs: np.ndarray
    class_names: tuple[str, ...] = ()
    floor: float = PROB_FLOOR

    def __post_init__(self):
        p = np.array(self.probs, dtype=np.float64)
        if p.ndim != 2 or p.shape[0] < 1 or p.shape[1] < 1:
            raise ValidationError(f"probability matrix must be 2-D and non-empty, got shape {p.shape}")
        if not np.all(np.isfinite(p)):
            row = int(np.argwhere(~np.isfinite(p))[0, 0])
            raise ValidationError(f"row {row}: non-finite probability")
        if np.any(p < 0):
            row = int(np.argwhere(p < 0)[0, 0])
            raise ValidationError(f"row {row}: negative probability")
        sums = p.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)
        if bad.size:
            row = int(bad[0])
            raise ValidationError(f"row {row}: probabilities sum to {sums[row]:.6g}, expected 1")
        if not self.floor > 0:
            raise ValidationError("probability floor must be positive")
        low = p < self.floor
        if low.any():
            rows = low.any(axis=1)
            p[low] = self.floor
            p[rows] /= p[rows].sum(axis=1, keepdims=True)
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)
        names = tuple(self.class_names) or tuple(str(c) for c in range(p.shape[1]))
        if len(names) != p.shape[1]:
            raise ValidationError(f"{len(names)} class names for {p.shape[1]} classes")
        object.__setattr__(self, "class_names", names)

    @property
    def T(self) -> int:
        return self.probs.shape[0]

    @property
    def C(self) -> int:
        return self.probs.shape[1]

    def log_probs(self) -> np.ndarray:
        return np.log(self.probs)

    def subsample(self, stride: int) -> "ProbMatrix":
        """Every ``stride``-th frame, starting at frame 0."""
        return ProbMatrix(self.probs[::stride], self.class_names, self.floor)


@dataclass(frozen=True)
class LengthModel:
    """Per-class expected segment length (frames) and a width per class."""

    family: LengthFamily
    expected: np.ndarray
    scale: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "family", LengthFamily(self.family))
        expected = np.array(self.expected, dtype=np.float64).reshape(-1)
        if expected.size == 0 or not np.all(expected > 0) or not np.all(np.isfinite(expected)):
            raise ValidationError("expected lengths must be positive and finite")
        scale = np.ones_like(expected) if self.scale is None else np.array(self.scale, dtype=np.float64).reshape(-1)
        if scale.shape != expected.shape:
            raise ValidationError("scale must have one entry per class")
        if not np.all(scale > 0):
            raise ValidationError("scale must be positive")
        expected.setflags(write=False)
        scale.setflags(write=False)
        object.__setattr__(self, "expected", expected)
        object.__setattr__(self, "scale", scale)

    @property
    def num_classes(self) -> int:
        return self.expected.size

    def with_family(self, family) -> "LengthModel":
        return LengthModel(LengthFamily(family), self.expected, self.scale)

    def rescaled(self, factor: float) -> "LengthModel":
        return LengthModel(self.family, self.expected * factor, self.scale * factor)

    @classmethod
    def uniform(cls, num_classes: int, length: float, family=LengthFamily.POISSON) -> "LengthModel":
        return cls(family, np.full(num_classes, float(length)))


def as_transcript(labels: Sequence[int], num_classes: int | None = None) -> Transcript:
    t = np.asarray(labels)
    if t.ndim != 1 or t.size == 0:
        raise ValidationError("transcript must be a non-empty 1-D sequence")
    if not np.issubdtype(t.dtype, np.integer):
        if not np.all(np.mod(t, 1) == 0):
            raise ValidationError("transcript labels must be integers")
    t = t.astype(np.int64)
    if np.any(t < 0) or (num_classes is not None and np.any(t >= num_classes)):
        raise ValidationError(f"transcript labels must lie in [0, {num_classes})")
    return t


def check_integral_lengths(lengths: Sequence, T: int | None = None) -> np.ndarray:
    ell = np.asarray(lengths)
    if ell.ndim != 1 or ell.size == 0:
        raise ValidationError("lengths must be a non-empty 1-D sequence")
    if not np.all(np.mod(ell, 1) == 0) or np.any(ell < 1):
        raise ValidationError("lengths must be positive integers")
    ell = ell.astype(np.int64)
    if T is not None and ell.sum() != T:
        raise ValidationError(f"lengths sum to {ell.sum()}, expected {T}")
    return ell


def boundaries(lengths: Sequence) -> np.ndarray:
    """Start frame of each segment."""
    ell = np.asarray(lengths)
    return np.concatenate(([0], np.cumsum(ell)[:-1])).astype(ell.dtype)


def alpha(t: int, transcript: Sequence[int], lengths: Sequence[int], T: int | None = None) -> int:
    """Class index of frame ``t`` under the segment-wise labeling."""
    ell = check_integral_lengths(lengths, T)
    labels = as_transcript(transcript)
    if labels.size != ell.size:
        raise ValidationError("transcript and lengths differ in size")
    total = int(ell.sum())
    if not 0 <= t < total:
        raise ValidationError(f"frame {t} outside [0, {total})")
    n = np.searchsorted(np.cumsum(ell), t, side="right")
    return int(labels[n])


def to_framewise(transcript: Sequence[int], lengths: Sequence[int], T: int | None = None) -> Segmentation:
    ell = check_integral_lengths(lengths, T)
    labels = as_transcript(transcript)
    if labels.size != ell.size:
        raise ValidationError("transcript and lengths differ in size")
    return np.repeat(labels, ell)


def to_segmentwise(frame_labels: Sequence[int]) -> tuple[Transcript, LengthConfig]:
    """Run-length encode a frame-wise segmentation."""
    y = np.asarray(frame_labels)
    if y.ndim != 1 or y.size == 0:
        raise ValidationError("segmentation must be a non-empty 1-D sequence")
    starts = np.flatnonzero(np.concatenate(([True], y[1:] != y[:-1])))
    lengths = np.diff(np.append(starts, y.size))
    return y[starts].astype(np.int64), lengths.astype(np.int64)


def round_lengths(real_lengths: Sequence[float], T: int) -> LengthConfig:
    """Project positive real lengths onto integers >= 1 summing to ``T``.

    Largest-remainder apportionment of ``T`` proportional to the inputs.
    Ties go to the earlier segment.
    """
    x = np.asarray(real_lengths, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValidationError("lengths must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(x)) or np.any(x <= 0):
        raise ValidationError("lengths must be positive and finite")
    N = x.size
    if N > T:
        raise InfeasibleError(f"cannot split {T} frames into {N} non-empty segments")
    quota = x * (T / x.sum())
    out = np.maximum(np.floor(quota), 1).astype(np.int64)
    remainder = quota - out
    deficit = T - int(out.sum())
    if deficit > 0:
        order = np.argsort(-remainder, kind="stable")
        out[order[:deficit]] += 1
    while deficit < 0:
        # Segments raised to the minimum of one frame push the sum over T;
        # take frames back from the most over-allocated segments.
        order = np.argsort(remainder, kind="stable")
        order = order[out[order] > 1]
        take = order[: -deficit]
        out[take] -= 1
        remainder[take] += 1
        deficit += take.size
    return out
