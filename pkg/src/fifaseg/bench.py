"""Speed/accuracy benchmark scenarios over a set of problem instances.

Every decode is timed on its own (wall clock around the decode call only)
and produces one CSV row. After all runs a summary row per
``(method, param, value)`` holds the medians of the metrics and timings.
"""

from __future__ import annotations

import csv
import enum
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

from .core import LengthFamily, LengthModel, SegmentationError, to_framewise
from .data import ProblemInstance
from .exact import ExactConfig, viterbi_with_sampling
from .fifa import FifaConfig, InitMode, Optimizer, fifa_align, init_lengths
from .metrics import evaluate

METRIC_KEYS = ("mof", "mof_bg", "iou", "iod", "edit", "f1_10", "f1_25", "f1_50")
CSV_FIELDS = (
    "scenario", "row_type", "method", "param", "value", "repeat", "video_id",
    *METRIC_KEYS, "seconds", "workers", "n", "status", "error",
)


class Scenario(str, enum.Enum):
    STEPS_SWEEP = "steps"
    EXACT_SAMPLING_SWEEP = "sampling"
    BETA_SWEEP = "beta"
    LR_SWEEP = "lr"
    INIT_ABLATION = "init"
    SPEEDUP = "speedup"


DEFAULT_GRIDS = {
    Scenario.STEPS_SWEEP: [0, 2, 5, 10, 30, 50, 60],
    Scenario.EXACT_SAMPLING_SWEEP: [1, 2, 4, 8, 16],
    Scenario.BETA_SWEEP: [0.0, 0.01, 0.05, 0.1, 0.5, 1.0, 10.0, 100.0],
    Scenario.LR_SWEEP: [0.001, 0.01, 0.03, 0.1, 0.3, 1.0],
    Scenario.INIT_ABLATION: ["model", "equal"],
    Scenario.SPEEDUP: [50],
}


@dataclass(frozen=True)
class BenchScenario:
    scenario: Scenario
    grid: tuple = ()
    repeats: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        if not self.grid:
            object.__setattr__(self, "grid", tuple(DEFAULT_GRIDS[self.scenario]))
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")


@dataclass(frozen=True)
class Job:
    """One decode: a method with its configuration on one instance."""

    method: str  # "exact" or "fifa"
    param: str
    value: object
    repeat: int
    fifa: FifaConfig
    exact: ExactConfig
    init: InitMode
    label: str


def _jobs(bench: BenchScenario, fifa_cfg: FifaConfig, exact_cfg: ExactConfig, init: InitMode) -> list[Job]:
    sc = bench.scenario
    jobs = []

    def add(method, param, value, fcfg=fifa_cfg, ecfg=exact_cfg, init_mode=init, label=None):
        for r in range(bench.repeats):
            jobs.append(Job(method, param, value, r, fcfg, ecfg, InitMode(init_mode), label or method))

    if sc is Scenario.STEPS_SWEEP:
        for steps in bench.grid:
            add("fifa", "steps", int(steps), replace(fifa_cfg, steps=int(steps)))
        add("exact", "steps", "exact")
    elif sc is Scenario.EXACT_SAMPLING_SWEEP:
        for stride in bench.grid:
            add("exact", "stride", int(stride), ecfg=replace(exact_cfg, frame_sample_stride=int(stride)))
        add("fifa", "stride", "fifa")
    elif sc is Scenario.BETA_SWEEP:
        for fam in (LengthFamily.LAPLACE, LengthFamily.GAUSSIAN):
            for beta in bench.grid:
                add("fifa", "beta", float(beta), replace(fifa_cfg, beta=float(beta), length_family=fam),
                    label=f"fifa-{fam.value}")
    elif sc is Scenario.LR_SWEEP:
        for opt in (Optimizer.SGD, Optimizer.ADAM):
            for lr in bench.grid:
                add("fifa", "lr", float(lr), replace(fifa_cfg, learning_rate=float(lr), optimizer=opt),
                    label=f"fifa-{opt.value}")
    elif sc is Scenario.INIT_ABLATION:
        for mode in bench.grid:
            add("exact", "init", str(mode), init_mode=mode)
            add("fifa", "init", str(mode), init_mode=mode)
    elif sc is Scenario.SPEEDUP:
        for steps in bench.grid:
            add("exact", "steps", "exact")
            add("fifa", "steps", int(steps), replace(fifa_cfg, steps=int(steps)))
    return jobs


def run_job(job: Job, inst: ProblemInstance, length_model: LengthModel, background=()) -> dict:
    row = {
        "row_type": "run", "method": job.label, "param": job.param, "value": job.value,
        "repeat": job.repeat, "video_id": inst.video_id, "n": 1, "status": "ok", "error": "",
    }
    T = inst.probs.T
    transcript = inst.transcript
    try:
        if transcript is None:
            raise SegmentationError("instance has no transcript")
        if job.method == "exact":
            model = length_model
            if job.init is InitMode.EQUAL:
                model = LengthModel.uniform(length_model.num_classes, T / len(transcript))
            model = model.with_family(LengthFamily.POISSON)
            t0 = time.perf_counter()
            res = viterbi_with_sampling(inst.probs, transcript, model, job.exact)
            row["seconds"] = time.perf_counter() - t0
        else:
            init = init_lengths(job.init, transcript, length_model, T)
            t0 = time.perf_counter()
            res, _ = fifa_align(inst.probs, transcript, init, length_model, job.fifa)
            row["seconds"] = time.perf_counter() - t0
        if inst.gt is not None:
            report = evaluate(to_framewise(transcript, res.lengths), inst.gt, background).to_dict()
            row.update({k: report[k] for k in METRIC_KEYS})
    except Exception as err:  # recorded per row; the run continues
        row["status"] = "error"
        row["error"] = f"{type(err).__name__}: {err}"
    return row


def _run_packed(args):
    return run_job(*args)


def run_bench(
    bench: BenchScenario,
    instances: Sequence[ProblemInstance],
    length_model: LengthModel,
    fifa_cfg: FifaConfig = FifaConfig(),
    exact_cfg: ExactConfig = ExactConfig(),
    init: InitMode = InitMode.FROM_MODEL,
    workers: int = 1,
    background=(),
) -> list[dict]:
    jobs = _jobs(bench, fifa_cfg, exact_cfg, InitMode(init))
    tasks = [(job, inst, length_model, tuple(background)) for job in jobs for inst in instances]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_packed, tasks))
    else:
        rows = [run_job(*t) for t in tasks]
    for row in rows:
        row["scenario"] = bench.scenario.value
        row["workers"] = workers
    return rows + summarize(rows)


def summarize(rows: list[dict]) -> list[dict]:
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        if row["row_type"] == "run":
            groups.setdefault((row["method"], row["param"], str(row["value"])), []).append(row)
    out = []
    for (method, param, value), members in groups.items():
        ok = [r for r in members if r["status"] == "ok"]
        summary = {
            "scenario": members[0]["scenario"], "row_type": "summary", "method": method,
            "param": param, "value": members[0]["value"], "repeat": "", "video_id": "",
            "workers": members[0]["workers"], "n": len(ok),
            "status": "ok" if ok else "error",
            "error": "" if len(ok) == len(members) else f"{len(members) - len(ok)} failed runs",
        }
        for key in METRIC_KEYS + ("seconds",):
            vals = [r[key] for r in ok if r.get(key) is not None]
            summary[key] = statistics.median(vals) if vals else None
        out.append(summary)
    return out


def write_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in CSV_FIELDS})


def read_csv(path) -> list[dict]:
    """Parse a benchmark CSV, checking the header and numeric columns."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_FIELDS:
            raise ValueError(f"unexpected header {reader.fieldnames}")
        rows = []
        for lineno, row in enumerate(reader, 2):
            if row["row_type"] not in ("run", "summary"):
                raise ValueError(f"line {lineno}: bad row_type {row['row_type']!r}")
            for key in METRIC_KEYS + ("seconds",):
                if row[key] != "":
                    row[key] = float(row[key])
                else:
                    row[key] = None
            row["workers"] = int(row["workers"])
            row["n"] = int(row["n"])
            rows.append(row)
    return rows
