"""Approximate inference by gradient descent on a differentiable energy.

Each segment gets a soft plateau mask over the frame axis. The masks turn
the piecewise-constant label assignment into a smooth function of the
segment lengths, so the observation energy (mask-weighted negative log
probabilities) and a Laplace or Gaussian length penalty can be minimized
with SGD or Adam. Lengths are optimized in log space to stay positive.
"""

from __future__ import annotations

import csv
import enum
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .core import (
    LengthFamily,
    LengthModel,
    ProbMatrix,
    SegmentationError,
    ValidationError,
    as_transcript,
    round_lengths,
)
from .exact import DecodeResult

_EXP_CLAMP = 500.0


class Optimizer(str, enum.Enum):
    SGD = "sgd"
    ADAM = "adam"


class InitMode(str, enum.Enum):
    FROM_MODEL = "model"
    EQUAL = "equal"


class DivergenceError(SegmentationError, FloatingPointError):
    """Energy or gradient became non-finite; ``trace`` holds the steps so far."""

    kind = "runtime"

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class PlateauParams:
    center: float
    half_width: float
    sharpness: float

    def __post_init__(self):
        if not (self.half_width > 0 and self.sharpness > 0):
            raise ValidationError("plateau width and sharpness must be positive")


@dataclass(frozen=True)
class FifaConfig:
    steps: int = 50
    optimizer: Optimizer = Optimizer.ADAM
    learning_rate: float = 0.3
    sharpness: float = 1.75
    beta: float = 0.05
    length_family: LengthFamily = LengthFamily.LAPLACE
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    # Rescale the lengths to sum to T after every update. Without it the
    # observation energy is minimized by shrinking every mask to nothing.
    normalize_lengths: bool = True

    def __post_init__(self):
        object.__setattr__(self, "optimizer", Optimizer(self.optimizer))
        object.__setattr__(self, "length_family", LengthFamily(self.length_family))
        if self.length_family is LengthFamily.POISSON:
            raise ValidationError("the approximate energy needs a laplace or gaussian length family")
        if self.steps < 0:
            raise ValidationError("steps must be >= 0")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive")
        if not self.sharpness > 0:
            raise ValidationError("sharpness must be positive")
        if not self.beta >= 0:
            raise ValidationError("beta must be non-negative")


@dataclass(frozen=True)
class EnergyBreakdown:
    observation: float
    length: float
    total: float

    def to_dict(self) -> dict:
        return {"observation": self.observation, "length": self.length, "total": self.total}


@dataclass
class TraceStep:
    step: int
    log_lengths: np.ndarray
    lengths: np.ndarray
    energy: EnergyBreakdown


@dataclass
class OptimTrace:
    steps: list[TraceStep] = field(default_factory=list)
    final_lengths: np.ndarray | None = None
    elapsed: float = 0.0

    def __len__(self):
        return len(self.steps)

    def totals(self) -> np.ndarray:
        return np.array([s.energy.total for s in self.steps])

    def write_csv(self, path) -> None:
        n = self.steps[0].log_lengths.size if self.steps else 0
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "total", "E_o", "E_l"] + [f"l_{i + 1}" for i in range(n)])
            for s in self.steps:
                e = s.energy
                w.writerow([s.step, repr(e.total), repr(e.observation), repr(e.length)]
                           + [repr(float(v)) for v in s.lengths])


def nll_matrix(probs: ProbMatrix, transcript) -> np.ndarray:
    """``P[n, t] = -log p(c_n | x_t)``, shape ``(N, T)``."""
    labels = as_transcript(transcript, probs.C)
    return -np.log(probs.probs[:, labels].T)


def plateau(t, params: PlateauParams):
    """Smooth bump equal to ~1 on ``[center - half_width, center + half_width]``."""
    t = np.asarray(t, dtype=np.float64)
    s, c, w = params.sharpness, params.center, params.half_width
    right = np.exp(np.clip(s * (t - c - w), -_EXP_CLAMP, _EXP_CLAMP))
    left = np.exp(np.clip(s * (-t + c - w), -_EXP_CLAMP, _EXP_CLAMP))
    return 1.0 / ((right + 1.0) * (left + 1.0))


def frame_centers(T: int) -> np.ndarray:
    """Frame ``t`` covers ``[t, t + 1)``; masks are sampled at its midpoint."""
    return np.arange(T, dtype=np.float64) + 0.5


def mask_from_lengths(lengths, T: int, sharpness: float) -> np.ndarray:
    """Soft segment masks ``M*[n, t]``, shape ``(N, T)``.

    Written as a product of two logistic sigmoids, which equals the plateau
    with center ``b + l/2`` and half-width ``l/2`` sampled at frame centers.
    """
    ell = np.asarray(lengths, dtype=np.float64)
    end = np.cumsum(ell)
    start = end - ell
    t = frame_centers(T)
    return expit(sharpness * (t - start[:, None])) * expit(sharpness * (end[:, None] - t))


def hard_mask(lengths, T: int) -> np.ndarray:
    ell = np.asarray(lengths)
    end = np.cumsum(ell)
    start = end - ell
    t = np.arange(T)
    return ((t >= start[:, None]) & (t < end[:, None])).astype(np.float64)


def observation_energy(P: np.ndarray, mask: np.ndarray) -> float:
    if P.shape != mask.shape:
        raise ValidationError(f"shape mismatch {P.shape} vs {mask.shape}")
    return float(np.sum(mask * P))


def length_energy(lengths, expected, family, scale=1.0) -> float:
    d = (np.asarray(lengths, dtype=np.float64) - np.asarray(expected, dtype=np.float64)) / scale
    if LengthFamily(family) is LengthFamily.LAPLACE:
        return float(np.abs(d).sum())
    if LengthFamily(family) is LengthFamily.GAUSSIAN:
        return float(np.square(d).sum())
    raise ValidationError(f"no approximate length energy for {family}")


def segment_targets(transcript, length_model: LengthModel) -> tuple[np.ndarray, np.ndarray]:
    labels = as_transcript(transcript, length_model.num_classes)
    return length_model.expected[labels], length_model.scale[labels]


class Energy:
    """Approximate energy of one (video, transcript) pair as a function of log-lengths.

    ``expected`` and ``scale`` are per-segment length targets and widths.

    Mask rows are only evaluated within ``tail / sharpness`` frames of their
    segment; outside that window the mask is below ``exp(-tail)`` and is
    dropped. ``tail=None`` evaluates the full ``N x T`` mask.
    """

    def __init__(self, P: np.ndarray, expected, scale, cfg: FifaConfig, tail: float | None = 40.0):
        self.P = np.ascontiguousarray(P, dtype=np.float64)
        self.N, self.T = self.P.shape
        self.expected = np.asarray(expected, dtype=np.float64)
        self.scale = np.broadcast_to(np.asarray(scale, dtype=np.float64), self.expected.shape)
        self.cfg = cfg
        self.tail = tail
        self._rows = np.arange(self.N)

    def lengths(self, log_lengths) -> np.ndarray:
        with np.errstate(over="ignore", invalid="ignore"):
            ell = np.exp(np.asarray(log_lengths, dtype=np.float64))
            if self.cfg.normalize_lengths:
                ell *= self.T / ell.sum()
        return ell

    def breakdown(self, log_lengths) -> EnergyBreakdown:
        """Energy from the full mask, without gradients."""
        ell = self.lengths(log_lengths)
        e_o = observation_energy(self.P, mask_from_lengths(ell, self.T, self.cfg.sharpness))
        e_l = length_energy(ell, self.expected, self.cfg.length_family, self.scale)
        return EnergyBreakdown(e_o, e_l, e_o + self.cfg.beta * e_l)

    def _frames(self, start, end):
        """Flattened (row, frame) pairs covering every mask window."""
        if self.tail is None:
            rows = np.repeat(self._rows, self.T)
            return rows, np.tile(np.arange(self.T), self.N)
        pad = self.tail / self.cfg.sharpness
        lo = np.clip(np.floor(start - pad), 0, self.T).astype(np.int64)
        hi = np.clip(np.ceil(end + pad) + 1, 0, self.T).astype(np.int64)
        counts = np.maximum(hi - lo, 0)
        rows = np.repeat(self._rows, counts)
        first = np.cumsum(counts) - counts
        frames = np.arange(rows.size) - np.repeat(first - lo, counts)
        return rows, frames

    def __call__(self, log_lengths) -> tuple[EnergyBreakdown, np.ndarray]:
        """Energy and its gradient with respect to the log-lengths."""
        s = self.cfg.sharpness
        ell = self.lengths(log_lengths)
        end = np.cumsum(ell)
        start = end - ell
        rows, frames = self._frames(start, end)
        t = frames + 0.5
        # mask = 1 / ((1 + r) (1 + f)) with r, f the two exponentials of the plateau
        r = np.exp(np.minimum(s * (start[rows] - t), _EXP_CLAMP))
        f = np.exp(np.minimum(s * (t - end[rows]), _EXP_CLAMP))
        r1 = 1.0 + r
        f1 = 1.0 + f
        weighted = self.P[rows, frames] / (r1 * f1)
        row = np.bincount(rows, weighted, minlength=self.N)
        e_o = float(row.sum())
        # d mask / d start = -s * mask * r / (1 + r); d mask / d end = s * mask * f / (1 + f)
        g_start = -s * np.bincount(rows, weighted * (r / r1), minlength=self.N)
        g_end = s * np.bincount(rows, weighted * (f / f1), minlength=self.N)
        # start_n depends on l_m for m < n, end_n on l_m for m <= n
        tail_end = np.cumsum(g_end[::-1])[::-1]
        tail_start = np.cumsum(g_start[::-1])[::-1] - g_start
        grad_len = tail_end + tail_start

        d = (ell - self.expected) / self.scale
        if self.cfg.length_family is LengthFamily.LAPLACE:
            e_l = float(np.abs(d).sum())
            grad_len += self.cfg.beta * np.sign(d) / self.scale
        else:
            e_l = float(np.square(d).sum())
            grad_len += self.cfg.beta * 2.0 * d / self.scale
        energy = EnergyBreakdown(e_o, e_l, e_o + self.cfg.beta * e_l)
        if self.cfg.normalize_lengths:
            # l_n = T exp(u_n) / sum(exp(u)): dl_n/du_k = l_n (delta_nk - l_k / T)
            grad_len = grad_len - np.dot(ell, grad_len) / self.T
        return energy, grad_len * ell


def total_energy(lengths, probs: ProbMatrix, transcript, length_model: LengthModel, cfg: FifaConfig = FifaConfig(), expected=None) -> EnergyBreakdown:
    """Energy at the given real ``lengths`` (used as is, not renormalized).

    ``expected`` overrides the per-class targets taken from ``length_model``.
    """
    target, scale = segment_targets(transcript, length_model)
    if expected is not None:
        target = np.asarray(expected, dtype=np.float64)
    e_o = observation_energy(nll_matrix(probs, transcript), mask_from_lengths(lengths, probs.T, cfg.sharpness))
    e_l = length_energy(lengths, target, cfg.length_family, scale)
    return EnergyBreakdown(e_o, e_l, e_o + cfg.beta * e_l)


def energy_gradient(log_lengths, probs: ProbMatrix, transcript, length_model: LengthModel, cfg: FifaConfig = FifaConfig(), expected=None) -> np.ndarray:
    target, scale = segment_targets(transcript, length_model)
    if expected is not None:
        target = np.asarray(expected, dtype=np.float64)
    energy = Energy(nll_matrix(probs, transcript), target, scale, cfg)
    return energy(log_lengths)[1]


class Adam:
    def __init__(self, lr, betas=(0.9, 0.999), eps=1e-8):
        self.lr, (self.b1, self.b2), self.eps = lr, betas, eps
        self.m = self.v = None
        self.t = 0

    def step(self, x, g):
        if self.m is None:
            self.m, self.v = np.zeros_like(x), np.zeros_like(x)
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        m_hat = self.m / (1 - self.b1**self.t)
        v_hat = self.v / (1 - self.b2**self.t)
        return x - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, x, g):
        return x - self.lr * g


def make_optimizer(cfg: FifaConfig):
    if cfg.optimizer is Optimizer.ADAM:
        return Adam(cfg.learning_rate, cfg.adam_betas, cfg.adam_eps)
    return SGD(cfg.learning_rate)


def init_lengths(mode, transcript, length_model: LengthModel | None, T: int) -> np.ndarray:
    labels = as_transcript(transcript)
    N = labels.size
    if N > T:
        raise ValidationError(f"{N} segments do not fit into {T} frames")
    if InitMode(mode) is InitMode.EQUAL:
        return np.full(N, T / N)
    if length_model is None:
        raise ValidationError("initialization from the length model needs a length model")
    target = length_model.expected[labels]
    return target * (T / target.sum())


def fifa_align(probs: ProbMatrix, transcript, init, length_model: LengthModel | None = None, cfg: FifaConfig = FifaConfig()) -> tuple[DecodeResult, OptimTrace]:
    """Run ``cfg.steps`` optimizer steps from ``init`` lengths.

    The initial lengths double as the targets of the length energy; the
    length model only contributes its per-class widths.
    """
    start_clock = time.perf_counter()
    labels = as_transcript(transcript, probs.C)
    init = np.asarray(init, dtype=np.float64)
    if init.shape != labels.shape:
        raise ValidationError("init must have one length per transcript entry")
    if not np.all(init > 0):
        raise ValidationError("init lengths must be positive")
    scale = 1.0 if length_model is None else segment_targets(labels, length_model)[1]
    energy = Energy(nll_matrix(probs, labels), init, scale, cfg)
    opt = make_optimizer(cfg)
    trace = OptimTrace()
    u = np.log(init)
    for step in range(cfg.steps + 1):
        if not np.all(np.isfinite(energy.lengths(u))):
            raise DivergenceError(f"non-finite lengths at step {step}", trace)
        e, g = energy(u)
        trace.steps.append(TraceStep(step, u.copy(), energy.lengths(u), e))
        if not (np.isfinite(e.total) and np.all(np.isfinite(g)) and np.all(np.isfinite(u))):
            raise DivergenceError(f"non-finite energy or gradient at step {step}", trace)
        if step < cfg.steps:
            u = opt.step(u, g)
    real = energy.lengths(u)
    lengths = round_lengths(real, probs.T)
    trace.final_lengths = real
    trace.elapsed = time.perf_counter() - start_clock
    res = DecodeResult(lengths, None, trace.elapsed, trace.steps[-1].energy, real)
    return res, trace


def select_transcript_fifa(
    probs: ProbMatrix,
    candidates: Sequence,
    length_model: LengthModel | None,
    cfg: FifaConfig = FifaConfig(),
    init_mode=InitMode.FROM_MODEL,
) -> tuple[int, DecodeResult]:
    if len(candidates) == 0:
        raise ValidationError("no candidate transcripts")
    best_idx, best = -1, None
    failures = {}
    for i, cand in enumerate(candidates):
        try:
            init = init_lengths(init_mode, cand, length_model, probs.T)
            res, _ = fifa_align(probs, cand, init, length_model, cfg)
        except SegmentationError as err:
            failures[i] = str(err)
            continue
        if best is None or res.energy.total < best.energy.total:
            best_idx, best = i, res
    if best is None:
        detail = "; ".join(f"candidate {i}: {msg}" for i, msg in failures.items())
        raise SegmentationError(f"all candidates failed ({detail})")
    return best_idx, best
