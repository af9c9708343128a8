"""Command-line front end: one subcommand per pipeline stage.

Exit status: 0 on success, 2 for usage errors, 3 for input/validation
errors, 1 for anything unexpected.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from . import synth as synth_mod
from .config import load_config
from .errors import PipelineError
from .pipeline import (evaluate_detections, evaluate_traces,
                       meta_from_manifest, run_pipeline, stage_classify,
                       stage_detect, stage_generate, stage_ingest,
                       stage_segment, stage_simulate)
from .types import VideoMeta

EXIT_INPUT_ERROR = 3

_CONFIG_FLAGS = [
    ("--backend", str, "detection backend: template | ingest"),
    ("--detections", str, "external detection file for the ingest backend"),
    ("--truth", str, "ground-truth action trace for evaluation"),
    ("--jobs", int, "worker threads for frame-level stages"),
    ("--seed", int, "master seed for anything randomized"),
    ("--template-diameter", int, "indicator diameter in pixels"),
    ("--min-confidence", float, "detector emit floor"),
    ("--coarse-threshold", float, "pyramid candidate floor"),
    ("--max-per-frame", int, "detection cap per frame"),
    ("--opacity-threshold", float, "high/low opacity boundary"),
    ("--confidence-threshold", float, "action-engine confidence filter"),
    ("--spatial-radius-px", float, "stationary-action radius"),
    ("--tap-max-frames", int, "tap/long-tap span boundary"),
    ("--min-span-frames", int, "shortest believable touch, in frames"),
    ("--link-margin-px", float, "distance margin treated as a tie"),
    ("--low-opacity-min-fraction", float, "solid-frame fraction floor"),
    ("--fade-frames", int, "synthetic fade-out length"),
    ("--device-profile", str, "script export profile name"),
]


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--emit", choices=("text", "json"), default="text",
                        help="summary format on stdout")
    for flag, typ, help_text in _CONFIG_FLAGS:
        parser.add_argument(flag, type=typ, help=help_text)


def _config_from_args(args: argparse.Namespace, **extra):
    overrides = {flag.lstrip("-").replace("-", "_"): getattr(
        args, flag.lstrip("-").replace("-", "_"), None)
        for flag, _, _ in _CONFIG_FLAGS}
    overrides.update({k: v for k, v in extra.items() if v is not None})
    return load_config(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="touchreplay",
        description="Translate screen recordings of touch interactions "
                    "into replayable input scripts.")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="normalize a recording to 30 fps")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default="out")
    _add_common(p)

    p = sub.add_parser("detect", help="locate the touch indicator per frame")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default="detections.json")
    _add_common(p)

    p = sub.add_parser("classify", help="turn detections into actions")
    p.add_argument("--detections", dest="detections_file", required=True)
    p.add_argument("--frames", help="frame manifest for geometry/validation")
    p.add_argument("--out", default="actions.json")
    _add_common(p)

    p = sub.add_parser("segment", help="dump the touch groups (debug view)")
    p.add_argument("--detections", dest="detections_file", required=True)
    p.add_argument("--frames")
    p.add_argument("--out", default="groups.json")
    _add_common(p)

    p = sub.add_parser("generate", help="emit the low-level replay script")
    p.add_argument("--actions", required=True)
    p.add_argument("--frames", help="frame manifest supplying the geometry")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--out", default="replay.log")
    _add_common(p)

    p = sub.add_parser("simulate", help="replay a script on the software screen")
    p.add_argument("--script", required=True)
    p.add_argument("--out", default="derived_actions.json")
    _add_common(p)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--pred", help="predicted action trace")
    p.add_argument("--truth", dest="truth_trace", help="ground-truth trace")
    p.add_argument("--pred-detections")
    p.add_argument("--truth-detections")
    p.add_argument("--frames")
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--batch", help="JSON file listing {pred, truth} pairs")
    p.add_argument("--out")
    _add_common(p)

    p = sub.add_parser("synth", help="generate synthetic datasets/scenarios")
    p.add_argument("--spec", required=True, help="JSON synth spec")
    p.add_argument("--out", default="synth_out")
    _add_common(p)

    p = sub.add_parser("pipeline", help="run every stage end to end")
    p.add_argument("--frames", dest="frames_manifest")
    p.add_argument("--out")
    _add_common(p)
    return parser


def _emit(args, doc: dict, text_lines: list[str]) -> None:
    if args.emit == "json":
        print(json.dumps(doc, indent=2))
    else:
        for line in text_lines:
            print(line)


def _run(args: argparse.Namespace) -> int:
    if args.command == "ingest":
        cfg = _config_from_args(args)
        out = stage_ingest(args.manifest, args.out)
        _emit(args, {"normalized_manifest": str(out)},
              [f"wrote {out}"])

    elif args.command == "detect":
        cfg = _config_from_args(args)
        out = stage_detect(cfg, args.manifest, args.out)
        _emit(args, {"detections": str(out)}, [f"wrote {out}"])

    elif args.command == "classify":
        cfg = _config_from_args(args)
        out = stage_classify(cfg, args.detections_file, args.frames, args.out)
        _emit(args, {"actions": str(out)}, [f"wrote {out}"])

    elif args.command == "segment":
        cfg = _config_from_args(args)
        out = stage_segment(cfg, args.detections_file, args.frames, args.out)
        _emit(args, {"groups": str(out)}, [f"wrote {out}"])

    elif args.command == "generate":
        cfg = _config_from_args(args)
        if args.frames:
            meta = meta_from_manifest(args.frames)
        elif args.width and args.height:
            meta = VideoMeta(args.width, args.height, 30.0, 0, "cli")
        else:
            raise PipelineError(
                "generate needs --frames or both --width and --height")
        out = stage_generate(cfg, args.actions, meta, args.out)
        _emit(args, {"script": str(out)}, [f"wrote {out}"])

    elif args.command == "simulate":
        cfg = _config_from_args(args)
        out = stage_simulate(cfg, args.script, args.out)
        _emit(args, {"derived_actions": str(out)}, [f"wrote {out}"])

    elif args.command == "evaluate":
        doc = _run_evaluate(args)
        if args.out:
            Path(args.out).write_text(json.dumps(doc, indent=2) + "\n")
        _emit(args, doc, [json.dumps(doc, indent=2)])

    elif args.command == "synth":
        spec_doc = json.loads(Path(args.spec).read_text())
        seed = getattr(args, "seed", None)
        summary = synth_mod.run_synth_spec(spec_doc, args.out, seed)
        _emit(args, summary,
              [f"{summary['kind']}: wrote {summary['written']} items "
               f"under {summary['out']}"])

    elif args.command == "pipeline":
        cfg = _config_from_args(args, frames=args.frames_manifest,
                                output=args.out)
        summary = run_pipeline(cfg)
        _emit(args, summary, [
            f"frames: {summary['frames']}",
            f"actions: {summary['actions']}",
            f"artifacts under: {Path(summary['artifacts']['script']).parent}",
        ])
    return 0


def _run_evaluate(args: argparse.Namespace) -> dict:
    if args.batch:
        from .actions import load_actions
        from .metrics import (aggregate_sequence_reports, sequence_report)
        batch = json.loads(Path(args.batch).read_text())
        videos = []
        reports = []
        for pair in batch.get("pairs", []):
            pred = [a.kind for a in load_actions(pair["pred"])]
            truth = [a.kind for a in load_actions(pair["truth"])]
            rep = sequence_report(pred, truth)
            reports.append(rep)
            videos.append({"id": pair.get("id", pair["pred"]),
                           **rep.to_doc()})
        return {"videos": videos,
                "aggregate": aggregate_sequence_reports(reports)}
    if args.pred_detections and args.truth_detections:
        return evaluate_detections(args.pred_detections,
                                   args.truth_detections,
                                   args.iou, args.frames)
    if args.pred and args.truth_trace:
        return evaluate_traces(args.pred, args.truth_trace)
    raise PipelineError(
        "evaluate needs --pred/--truth, --pred-detections/--truth-detections,"
        " or --batch")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _run(args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
