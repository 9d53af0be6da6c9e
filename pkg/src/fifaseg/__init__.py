"""Exact and gradient-based approximate inference for temporal action segmentation."""

from .core import (
    InfeasibleError,
    LengthFamily,
    LengthModel,
    ProbMatrix,
    SegmentationError,
    ValidationError,
    alpha,
    round_lengths,
    to_framewise,
    to_segmentwise,
)
from .bench import BenchScenario, Scenario, run_bench
from .data import (
    ProblemInstance,
    SynthConfig,
    estimate_length_model,
    load_instances,
    load_probs,
    save_instance,
    save_probs,
    synth_instance,
)
from .exact import DecodeResult, ExactConfig, brute_force_align, select_transcript_exact, viterbi_align, viterbi_with_sampling
from .fifa import (
    EnergyBreakdown,
    FifaConfig,
    InitMode,
    OptimTrace,
    fifa_align,
    init_lengths,
    select_transcript_fifa,
)
from .metrics import MetricReport, evaluate

__version__ = "0.1.0"
