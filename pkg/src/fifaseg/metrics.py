"""Frame- and segment-level quality metrics for action segmentation.

All scores are fractions in ``[0, 1]``. Background classes are passed in
explicitly and are never guessed.

* MoF: fraction of frames labeled correctly. MoF-BG ignores frames whose
  ground truth is background.
* IoU / IoD: for every non-background ground-truth segment, the predicted
  segment of the same class with the largest overlap is matched; the scores
  are intersection over union and intersection over the matched segment,
  averaged over ground-truth segments (0 when nothing matches).
* Edit: ``1 - levenshtein(pred, gt) / max(len)`` over run-length transcripts.
* F1@tau: predicted segments are visited in temporal order; each is a true
  positive if its best same-class ground-truth segment reaches IoU ``tau``
  and has not been claimed yet. Background segments are ignored.

When neither side has any non-background segment the segmental scores are
1.0 (nothing to find, nothing wrongly found).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .core import ValidationError, to_segmentwise

F1_THRESHOLDS = (0.10, 0.25, 0.50)


@dataclass
class MetricReport:
    mof: float
    mof_bg: float
    iou: float
    iod: float
    edit: float
    f1: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"mof": self.mof, "mof_bg": self.mof_bg, "iou": self.iou, "iod": self.iod, "edit": self.edit}
        for tau in F1_THRESHOLDS:
            out[f"f1_{round(tau * 100):02d}"] = self.f1[tau]
        return {k: float(v) for k, v in out.items()}

    @classmethod
    def from_dict(cls, doc: dict) -> "MetricReport":
        f1 = {tau: float(doc[f"f1_{round(tau * 100):02d}"]) for tau in F1_THRESHOLDS}
        return cls(float(doc["mof"]), float(doc["mof_bg"]), float(doc["iou"]), float(doc["iod"]), float(doc["edit"]), f1)


def _pair(pred, gt):
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape or pred.ndim != 1:
        raise ValidationError(f"prediction has shape {pred.shape}, ground truth {gt.shape}")
    if pred.size == 0:
        raise ValidationError("empty segmentation")
    return pred, gt


def _segments(y, background=()):
    """(label, start, end) triples of the non-background runs, end exclusive."""
    labels, lengths = to_segmentwise(y)
    ends = np.cumsum(lengths)
    starts = ends - lengths
    bg = set(background)
    return [(int(c), int(s), int(e)) for c, s, e in zip(labels, starts, ends) if int(c) not in bg]


def mof(pred, gt) -> float:
    pred, gt = _pair(pred, gt)
    return float(np.mean(pred == gt))


def mof_bg(pred, gt, background: Iterable[int] = ()) -> float:
    pred, gt = _pair(pred, gt)
    keep = ~np.isin(gt, list(background))
    if not keep.any():
        return 1.0
    return float(np.mean(pred[keep] == gt[keep]))


def iou_iod(pred, gt, background: Iterable[int] = ()) -> tuple[float, float]:
    pred, gt = _pair(pred, gt)
    background = tuple(background)
    gt_segs = _segments(gt, background)
    pred_segs = _segments(pred, background)
    if not gt_segs:
        return (1.0, 1.0) if not pred_segs else (0.0, 0.0)
    ious, iods = [], []
    for c, s, e in gt_segs:
        best, match = 0, None
        for pc, ps, pe in pred_segs:
            if pc != c:
                continue
            inter = min(e, pe) - max(s, ps)
            if inter > best:
                best, match = inter, (ps, pe)
        if match is None:
            ious.append(0.0)
            iods.append(0.0)
            continue
        ps, pe = match
        ious.append(best / (max(e, pe) - min(s, ps)))
        iods.append(best / (pe - ps))
    return float(np.mean(ious)), float(np.mean(iods))


def levenshtein(a, b) -> int:
    a, b = list(a), list(b)
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[-1]


def edit_score(pred, gt, background: Iterable[int] = ()) -> float:
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.size == 0 or gt.size == 0:
        raise ValidationError("empty segmentation")
    a = [c for c, _, _ in _segments(pred, background)]
    b = [c for c, _, _ in _segments(gt, background)]
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(a, b) / longest


def f1_at(pred, gt, threshold: float, background: Iterable[int] = ()) -> float:
    if not 0 < threshold < 1:
        raise ValidationError("threshold must lie in (0, 1)")
    pred, gt = _pair(pred, gt)
    background = tuple(background)
    gt_segs = _segments(gt, background)
    pred_segs = _segments(pred, background)
    if not gt_segs and not pred_segs:
        return 1.0
    hit = [False] * len(gt_segs)
    tp = fp = 0
    for pc, ps, pe in pred_segs:
        best, idx = 0.0, -1
        for j, (c, s, e) in enumerate(gt_segs):
            if c != pc:
                continue
            inter = min(e, pe) - max(s, ps)
            if inter <= 0:
                continue
            iou = inter / (max(e, pe) - min(s, ps))
            if iou > best:
                best, idx = iou, j
        if idx >= 0 and best >= threshold and not hit[idx]:
            tp += 1
            hit[idx] = True
        else:
            fp += 1
    fn = len(gt_segs) - tp
    return 2 * tp / (2 * tp + fp + fn)


def evaluate(pred, gt, background: Iterable[int] = ()) -> MetricReport:
    background = tuple(background)
    iou, iod = iou_iod(pred, gt, background)
    return MetricReport(
        mof=mof(pred, gt),
        mof_bg=mof_bg(pred, gt, background),
        iou=iou,
        iod=iod,
        edit=edit_score(pred, gt, background),
        f1={tau: f1_at(pred, gt, tau, background) for tau in F1_THRESHOLDS},
    )
