"""Command line entry point: ``fifaseg {infer,eval,synth,bench,estimate-lengths}``.

Exit codes: 0 ok, 2 usage or validation error, 3 runtime failure. Errors are
reported on stderr as one JSON object ``{"error": kind, "message": ...}``.
Any flag can also be given in a JSON file passed via ``--config``, using the
flag name with dashes replaced by underscores; explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bench as benchmod
from .core import LengthFamily, LengthModel, SegmentationError, to_framewise, to_segmentwise
from .data import (
    MAGIC,
    SynthConfig,
    estimate_length_model,
    load_instances,
    load_length_model,
    load_probs,
    load_segmentation,
    load_transcript,
    save_instance,
    save_length_model,
    save_report,
    synth_instance,
)
from .exact import ExactConfig, alignment_log_prob, select_transcript_exact
from .fifa import FifaConfig, InitMode, fifa_align, init_lengths, select_transcript_fifa
from .metrics import evaluate

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3


class CliError(Exception):
    def __init__(self, kind, message, code=EXIT_USAGE):
        super().__init__(message)
        self.kind, self.code = kind, code


def _int_list(text):
    return [int(v) for v in text.replace(",", " ").split()]


def _add_fifa_flags(p):
    g = p.add_argument_group("approximate inference")
    g.add_argument("--steps", type=int, default=50)
    g.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    g.add_argument("--lr", type=float, default=0.3)
    g.add_argument("--sharpness", type=float, default=1.75)
    g.add_argument("--beta", type=float, default=0.05)
    g.add_argument("--length-family", choices=["laplace", "gaussian"], default="laplace")
    g.add_argument("--adam-beta1", type=float, default=0.9)
    g.add_argument("--adam-beta2", type=float, default=0.999)
    g.add_argument("--adam-eps", type=float, default=1e-8)
    g.add_argument("--no-normalize", action="store_true", help="do not rescale lengths to sum to T")
    g.add_argument("--init", choices=["model", "equal"], default="model")


def _add_exact_flags(p):
    g = p.add_argument_group("exact inference")
    g.add_argument("--max-segment-len", type=int, default=2000)
    g.add_argument("--stride", type=int, default=1, help="frame sampling stride")
    g.add_argument("--beam", type=int, default=None, help="length hypotheses kept per segment and frame")


def _fifa_cfg(a) -> FifaConfig:
    return FifaConfig(
        steps=a.steps, optimizer=a.optimizer, learning_rate=a.lr, sharpness=a.sharpness,
        beta=a.beta, length_family=a.length_family, adam_betas=(a.adam_beta1, a.adam_beta2),
        adam_eps=a.adam_eps, normalize_lengths=not a.no_normalize,
    )


def _exact_cfg(a) -> ExactConfig:
    return ExactConfig(a.max_segment_len, a.stride, a.beam)


def _detect_format(path) -> str:
    with open(path, "rb") as fh:
        return "packed_f32" if fh.read(4) == MAGIC else "csv"


def _emit(doc, output):
    text = json.dumps(doc, indent=2)
    if output:
        Path(output).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def cmd_infer(a):
    fmt = a.format if a.format != "auto" else _detect_format(a.probs)
    probs = load_probs(a.probs, fmt)
    if a.transcript:
        candidates = [load_transcript(a.transcript)]
    elif a.candidates:
        files = sorted(p for p in Path(a.candidates).iterdir() if p.is_file())
        if not files:
            raise CliError("io", f"{a.candidates}: no transcript files")
        candidates = [load_transcript(p) for p in files]
    else:
        raise CliError("usage", "one of --transcript or --candidates is required")
    model = load_length_model(a.length_model) if a.length_model else None
    if model is None:
        # Without a model every class is expected to take an equal share.
        n = np.mean([len(c) for c in candidates])
        model = LengthModel.uniform(probs.C, probs.T / n)

    results = {}
    if a.method in ("exact", "both"):
        exact_model = model.with_family(LengthFamily.POISSON)
        if a.init == "equal":
            exact_model = LengthModel.uniform(probs.C, probs.T / np.mean([len(c) for c in candidates]))
        idx, res = select_transcript_exact(probs, candidates, exact_model, _exact_cfg(a))
        results["exact"] = _describe(res, idx, candidates[idx], probs, exact_model)
    if a.method in ("fifa", "both"):
        cfg = _fifa_cfg(a)
        if len(candidates) == 1:
            idx = 0
            init = init_lengths(a.init, candidates[0], model, probs.T)
            res, trace = fifa_align(probs, candidates[0], init, model, cfg)
            if a.trace_csv:
                trace.write_csv(a.trace_csv)
        else:
            idx, res = select_transcript_fifa(probs, candidates, model, cfg, InitMode(a.init))
        poisson = model.with_family(LengthFamily.POISSON)
        results["fifa"] = _describe(res, idx, candidates[idx], probs, poisson)
    _emit({"probs": str(a.probs), "T": probs.T, "C": probs.C, "results": results}, a.output)


def _describe(res, idx, transcript, probs, poisson_model):
    doc = res.to_dict()
    doc["candidate_index"] = idx
    doc["transcript"] = [int(v) for v in transcript]
    doc["frame_labels"] = [int(v) for v in to_framewise(transcript, res.lengths)]
    if doc["log_prob"] is None:
        doc["log_prob"] = alignment_log_prob(probs, transcript, res.lengths, poisson_model)
    return doc


def cmd_eval(a):
    pred, gt = load_segmentation(a.pred), load_segmentation(a.gt)
    if pred.size != gt.size:
        raise CliError("validation", f"prediction has {pred.size} frames, ground truth {gt.size}")
    report = evaluate(pred, gt, a.background or ())
    if a.output:
        save_report(a.output, report)
    print(json.dumps(report.to_dict(), indent=2))


def cmd_synth(a):
    weights = tuple(a.class_length_weights) if a.class_length_weights else None
    base = dict(T=a.T, N=a.N, C=a.C, noise_temp=a.noise_temp, confusion_prob=a.confusion_prob,
                length_dirichlet_alpha=a.alpha, class_length_weights=weights)
    SynthConfig(seed=a.seed, **base)  # validate before writing anything
    out = Path(a.output)
    for i in range(a.count):
        save_instance(out, synth_instance(SynthConfig(seed=a.seed + i, **base), f"video{i:04d}"))
    if a.train_count:
        train = [synth_instance(SynthConfig(seed=a.seed + 1_000_000 + i, **base)).gt for i in range(a.train_count)]
        all_seen = {int(c) for g in train for c in g}
        model = estimate_length_model(train, LengthFamily.POISSON, a.C, required=sorted(all_seen))
        save_length_model(out / "length_model.json", model)
    print(json.dumps({"instances": a.count, "output": str(out)}))


def cmd_estimate_lengths(a):
    segs = [load_segmentation(p) for p in a.segmentations]
    model = estimate_length_model(segs, a.family, a.num_classes, a.require)
    if a.output:
        save_length_model(a.output, model)
    print(json.dumps({"family": model.family.value, "expected": model.expected.tolist()}))


def cmd_bench(a):
    if a.instances:
        instances = load_instances(a.instances)
        if not instances:
            raise CliError("io", f"{a.instances}: no instances")
    else:
        instances = [
            synth_instance(SynthConfig(T=a.T, N=a.N, C=a.C, seed=a.seed + i), f"video{i:04d}")
            for i in range(a.count)
        ]
    for inst in instances:
        if inst.transcript is None and inst.gt is not None:
            inst.transcript = to_segmentwise(inst.gt)[0]
    if a.length_model:
        model = load_length_model(a.length_model)
    elif a.instances and (Path(a.instances) / "length_model.json").exists():
        model = load_length_model(Path(a.instances) / "length_model.json")
    else:
        C = instances[0].probs.C
        mean_len = np.mean([inst.probs.T / len(inst.transcript) for inst in instances])
        model = LengthModel.uniform(C, mean_len)
    grid = tuple(json.loads(f"[{a.grid}]")) if a.grid else ()
    scenario = benchmod.BenchScenario(a.scenario, grid, a.repeats, a.seed)
    rows = benchmod.run_bench(scenario, instances, model, _fifa_cfg(a), _exact_cfg(a),
                              InitMode(a.init), a.workers, a.background or ())
    benchmod.write_csv(a.output, rows)
    summary = [r for r in rows if r["row_type"] == "summary"]
    print(json.dumps([{k: r[k] for k in ("method", "param", "value", "mof", "seconds", "n")} for r in summary], indent=2))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fifaseg", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON file with default flag values")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("infer", help="align a transcript or pick one from candidates")
    p.add_argument("--probs", required=True)
    p.add_argument("--format", choices=["auto", "csv", "packed_f32"], default="auto")
    p.add_argument("--transcript")
    p.add_argument("--candidates", help="directory of transcript files")
    p.add_argument("--length-model")
    p.add_argument("--method", choices=["exact", "fifa", "both"], default="fifa")
    p.add_argument("--trace-csv", help="write the per-step optimization trace")
    p.add_argument("--output", "-o")
    _add_fifa_flags(p)
    _add_exact_flags(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score a predicted segmentation")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--background", type=_int_list, default=[])
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate synthetic instances")
    p.add_argument("--T", "-T", type=int, default=200)
    p.add_argument("--N", "-N", type=int, default=5)
    p.add_argument("--C", "-C", type=int, default=10)
    p.add_argument("--noise-temp", type=float, default=1.0)
    p.add_argument("--confusion-prob", type=float, default=0.05)
    p.add_argument("--alpha", type=float, default=5.0, help="Dirichlet concentration of segment lengths")
    p.add_argument("--class-length-weights", type=lambda s: [float(v) for v in s.split(",")])
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--train-count", type=int, default=50, help="extra instances for length_model.json")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", "-o", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", help="run a benchmark scenario")
    p.add_argument("--scenario", choices=[s.value for s in benchmod.Scenario], required=True)
    p.add_argument("--grid", help="comma-separated grid values (JSON scalars)")
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--instances", help="directory written by `synth`")
    p.add_argument("--count", type=int, default=10, help="synthetic instances when --instances is absent")
    p.add_argument("--T", "-T", type=int, default=200)
    p.add_argument("--N", "-N", type=int, default=5)
    p.add_argument("--C", "-C", type=int, default=10)
    p.add_argument("--length-model")
    p.add_argument("--background", type=_int_list, default=[])
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", "-o", required=True)
    _add_fifa_flags(p)
    _add_exact_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("estimate-lengths", help="mean segment length per class")
    p.add_argument("segmentations", nargs="+")
    p.add_argument("--family", choices=["poisson", "laplace", "gaussian"], default="poisson")
    p.add_argument("--num-classes", type=int)
    p.add_argument("--require", type=_int_list, help="classes that must occur")
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_estimate_lengths)
    parser.subcommands = sub.choices
    return parser


def _error(kind, message, code):
    print(json.dumps({"error": kind, "message": str(message)}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args_list = sys.argv[1:] if argv is None else list(argv)
    if "--config" in args_list:
        i = args_list.index("--config")
        try:
            config = json.loads(Path(args_list[i + 1]).read_text(encoding="utf-8"))
        except (IndexError, OSError) as err:
            return _error("io", err, EXIT_USAGE)
        except json.JSONDecodeError as err:
            return _error("validation", f"config: {err}", EXIT_USAGE)
        for subparser in parser.subcommands.values():
            subparser.set_defaults(**config)
    args = parser.parse_args(args_list)
    try:
        args.func(args)
    except CliError as err:
        return _error(err.kind, err, err.code)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as err:
        return _error("io", err, EXIT_USAGE)
    except SegmentationError as err:
        code = EXIT_RUNTIME if err.kind == "runtime" else EXIT_USAGE
        return _error(err.kind, err, code)
    except (ValueError, TypeError) as err:
        return _error("validation", err, EXIT_USAGE)
    except Exception as err:  # pragma: no cover - last resort
        return _error("runtime", f"{type(err).__name__}: {err}", EXIT_RUNTIME)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
