"""Exact alignment by Viterbi-style dynamic programming.

The recursion keeps, for every frame ``t``, a table ``Q[n, l]``: the best
log-score of a labeling of frames ``0..t`` whose last segment is the
``n``-th transcript entry and has length ``l + 1``. Extending the current
segment shifts the table along ``l``; opening segment ``n`` at frame ``t``
takes the best finished segment ``n - 1`` including its length prior.
The last segment's prior is applied at termination.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .core import (
    InfeasibleError,
    LengthFamily,
    LengthModel,
    ProbMatrix,
    SegmentationError,
    ValidationError,
    as_transcript,
    check_integral_lengths,
    round_lengths,
)


class UnsupportedLengthModel(SegmentationError, ValueError):
    kind = "validation"


class TooLargeError(SegmentationError, ValueError):
    kind = "validation"


@dataclass(frozen=True)
class ExactConfig:
    max_segment_len: int = 2000
    frame_sample_stride: int = 1
    # Keep only the best ``beam`` hypotheses per segment index at each frame.
    beam: int | None = None

    def __post_init__(self):
        if self.max_segment_len < 1:
            raise ValidationError("max_segment_len must be >= 1")
        if self.frame_sample_stride < 1:
            raise ValidationError("frame_sample_stride must be >= 1")
        if self.beam is not None and self.beam < 1:
            raise ValidationError("beam must be >= 1")


@dataclass
class DecodeResult:
    """Integral lengths of an alignment plus whatever score produced them.

    ``log_prob`` is the alignment log probability (exact decoders);
    ``energy`` and ``real_lengths`` are filled in by the approximate decoder.
    """

    lengths: np.ndarray
    log_prob: float | None = None
    elapsed: float = 0.0
    energy: object = None
    real_lengths: np.ndarray | None = None

    def to_dict(self) -> dict:
        out = {
            "lengths": [int(v) for v in self.lengths],
            "log_prob": None if self.log_prob is None else float(self.log_prob),
            "elapsed": float(self.elapsed),
        }
        if self.energy is not None:
            out["energy"] = self.energy.to_dict()
        if self.real_lengths is not None:
            out["real_lengths"] = [float(v) for v in self.real_lengths]
        return out


def poisson_log_pmf(lengths: np.ndarray, mean: np.ndarray) -> np.ndarray:
    lengths = np.asarray(lengths, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    return lengths * np.log(mean) - mean - gammaln(lengths + 1.0)


def _check_poisson(length_model: LengthModel):
    if length_model.family is not LengthFamily.POISSON:
        raise UnsupportedLengthModel(
            f"exact inference needs a Poisson length model, got {length_model.family.value}"
        )


def _prepare(probs: ProbMatrix, transcript, length_model: LengthModel):
    _check_poisson(length_model)
    labels = as_transcript(transcript, probs.C)
    if np.any(labels >= length_model.num_classes):
        raise ValidationError("transcript uses classes missing from the length model")
    return labels


def alignment_log_prob(probs: ProbMatrix, transcript, lengths, length_model: LengthModel) -> float:
    """Log of the frame-product times length-prior score of one alignment."""
    labels = _prepare(probs, transcript, length_model)
    ell = check_integral_lengths(lengths, probs.T)
    frames = np.repeat(labels, ell)
    obs = np.log(probs.probs[np.arange(probs.T), frames]).sum()
    prior = poisson_log_pmf(ell, length_model.expected[labels]).sum()
    return float(obs + prior)


def viterbi_align(probs: ProbMatrix, transcript, length_model: LengthModel, cfg: ExactConfig = ExactConfig()) -> DecodeResult:
    labels = _prepare(probs, transcript, length_model)
    start = time.perf_counter()
    T, N, L = probs.T, labels.size, cfg.max_segment_len
    if N > T:
        raise InfeasibleError(f"{N} segments do not fit into {T} frames")
    if T > N * L:
        raise InfeasibleError(f"{T} frames exceed {N} segments of at most {L} frames")
    L = min(L, T - N + 1)

    frame_lp = np.log(probs.probs[:, labels])  # (T, N)
    prior = poisson_log_pmf(np.arange(1, L + 1)[None, :], length_model.expected[labels][:, None])  # (N, L)

    Q = np.full((N, L), -np.inf)
    Q[0, 0] = frame_lp[0, 0]
    back = np.zeros((T, N), dtype=np.int32)
    closed = np.empty((N - 1, L))
    for t in range(1, T):
        if N > 1:
            np.add(Q[:-1], prior[:-1], out=closed)
            best = closed.argmax(axis=1)
            opened = closed[np.arange(N - 1), best]
            back[t, 1:] = best + 1
        Q[:, 1:] = Q[:, :-1]
        Q[0, 0] = -np.inf
        if N > 1:
            Q[1:, 0] = opened
        Q += frame_lp[t][:, None]
        if cfg.beam is not None and cfg.beam < L:
            drop = np.argpartition(Q, L - cfg.beam, axis=1)[:, : L - cfg.beam]
            np.put_along_axis(Q, drop, -np.inf, axis=1)

    final = Q[N - 1] + prior[N - 1]
    last = int(final.argmax())
    log_prob = float(final[last])
    if not np.isfinite(log_prob):
        raise InfeasibleError("no feasible alignment")
    lengths = np.empty(N, dtype=np.int64)
    lengths[N - 1] = last + 1
    pos = T - lengths[N - 1]
    for n in range(N - 1, 0, -1):
        lengths[n - 1] = back[pos, n]
        pos -= lengths[n - 1]
    assert pos == 0 and lengths.min() >= 1
    return DecodeResult(lengths, log_prob, time.perf_counter() - start)


def brute_force_align(
    probs: ProbMatrix,
    transcript,
    length_model: LengthModel,
    max_segment_len: int | None = None,
    limit: int = 10**6,
) -> DecodeResult:
    """Score every composition of ``T`` into ``N`` parts. Test oracle only."""
    labels = _prepare(probs, transcript, length_model)
    start = time.perf_counter()
    T, N = probs.T, labels.size
    if N > T:
        raise InfeasibleError(f"{N} segments do not fit into {T} frames")
    count = math.comb(T - 1, N - 1)
    if count > limit:
        raise TooLargeError(f"{count} compositions exceed the limit of {limit}")
    logp = np.log(probs.probs)
    best_score, best = -np.inf, None
    for cuts in itertools.combinations(range(1, T), N - 1):
        edges = (0,) + cuts + (T,)
        ell = [edges[i + 1] - edges[i] for i in range(N)]
        if max_segment_len is not None and max(ell) > max_segment_len:
            continue
        score = 0.0
        for n in range(N):
            c = labels[n]
            for t in range(edges[n], edges[n + 1]):
                score += logp[t, c]
            score += ell[n] * math.log(length_model.expected[c]) - length_model.expected[c] - math.lgamma(ell[n] + 1)
        if score > best_score:
            best_score, best = score, ell
    if best is None:
        raise InfeasibleError("no feasible alignment")
    return DecodeResult(np.array(best, dtype=np.int64), best_score, time.perf_counter() - start)


def viterbi_with_sampling(probs: ProbMatrix, transcript, length_model: LengthModel, cfg: ExactConfig = ExactConfig()) -> DecodeResult:
    """Decode every ``stride``-th frame, then stretch the lengths back to ``T``."""
    s = cfg.frame_sample_stride
    if s == 1:
        return viterbi_align(probs, transcript, length_model, cfg)
    start = time.perf_counter()
    labels = as_transcript(transcript, probs.C)
    coarse = probs.subsample(s)
    if coarse.T < labels.size:
        raise InfeasibleError(f"{coarse.T} sampled frames cannot hold {labels.size} segments")
    coarse_cfg = ExactConfig(max(1, math.ceil(cfg.max_segment_len / s)), 1, cfg.beam)
    res = viterbi_align(coarse, labels, length_model.rescaled(1.0 / s), coarse_cfg)
    lengths = round_lengths(res.lengths * s, probs.T)
    return DecodeResult(lengths, res.log_prob, time.perf_counter() - start)


def select_transcript_exact(
    probs: ProbMatrix,
    candidates: Sequence,
    length_model: LengthModel,
    cfg: ExactConfig = ExactConfig(),
) -> tuple[int, DecodeResult]:
    if len(candidates) == 0:
        raise ValidationError("no candidate transcripts")
    best_idx, best = -1, None
    failures = {}
    for i, cand in enumerate(candidates):
        try:
            res = viterbi_with_sampling(probs, cand, length_model, cfg)
        except InfeasibleError as err:
            failures[i] = str(err)
            continue
        if best is None or res.log_prob > best.log_prob:
            best_idx, best = i, res
    if best is None:
        detail = "; ".join(f"candidate {i}: {msg}" for i, msg in failures.items())
        raise InfeasibleError(f"all candidates failed ({detail})")
    return best_idx, best
