"""Stage orchestration shared by the CLI.

Every stage reads and writes only the documented file formats, so the
chained `run_pipeline` produces byte-identical artifacts to invoking the
stages one at a time.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

from . import actions as actions_mod
from . import detect as detect_mod
from . import frames as frames_mod
from . import metrics as metrics_mod
from . import script as script_mod
from . import simulate as simulate_mod
from .config import PipelineConfig
from .errors import ConfigError, ValidationError
from .template import bullseye_template
from .types import VideoMeta


def meta_from_manifest(manifest_path: str | Path) -> VideoMeta:
    doc = frames_mod.read_manifest(manifest_path)
    return VideoMeta(int(doc["width"]), int(doc["height"]),
                     float(doc["fps"]), len(doc["frames"]),
                     str(manifest_path))


def meta_from_detection_doc(doc: dict) -> VideoMeta:
    """Fallback geometry when no frame manifest accompanies a detection file."""
    if not isinstance(doc, dict) or "meta" not in doc:
        raise ValidationError("detection file has no 'meta' object")
    m = doc["meta"]
    frames = doc.get("frames", [])
    count = 1 + max((int(f.get("index", 0)) for f in frames), default=-1)
    return VideoMeta(int(m["width"]), int(m["height"]),
                     float(m.get("fps", 30.0)), max(count, 0), "detections")


def stage_ingest(manifest_path: str | Path, out_dir: str | Path) -> Path:
    """Normalize a recording to 30 fps; writes the normalized manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = frames_mod.read_manifest(manifest_path)
    src_dir = Path(manifest_path).parent
    normalized = frames_mod.normalize_manifest(doc, str(manifest_path))
    normalized["frames"] = [
        os.path.relpath(src_dir / p, out_dir) for p in normalized["frames"]]
    out_path = out_dir / "normalized_meta.json"
    frames_mod.write_manifest(normalized, out_path)
    return out_path


def stage_detect(cfg: PipelineConfig, manifest_path: str | Path,
                 out_path: str | Path) -> Path:
    store = frames_mod.FrameStore(manifest_path)
    template = bullseye_template(cfg.template_diameter)
    per_frame = detect_mod.detect_sequence(
        store, template, cfg.detection_config(), jobs=cfg.jobs)
    detect_mod.export_detections(per_frame, store.meta(), out_path)
    return Path(out_path)


def _load_detections(cfg: PipelineConfig, detections_path: str | Path,
                     manifest_path: str | Path | None):
    path = Path(detections_path)
    if not path.is_file():
        raise ValidationError(f"detection file not found: {path}")
    doc = json.loads(path.read_text())
    if manifest_path:
        meta = meta_from_manifest(manifest_path)
    else:
        meta = meta_from_detection_doc(doc)
    return detect_mod.doc_to_detections(doc, meta), meta


def stage_classify(cfg: PipelineConfig, detections_path: str | Path,
                   manifest_path: str | Path | None,
                   out_path: str | Path) -> Path:
    per_frame, _ = _load_detections(cfg, detections_path, manifest_path)
    acts = actions_mod.classify_all(
        per_frame,
        confidence=cfg.confidence_threshold,
        min_span=cfg.min_span_frames,
        margin=cfg.link_margin_px,
        spatial_radius=cfg.spatial_radius_px,
        tap_max_frames=cfg.tap_max_frames,
        low_opacity_min_fraction=cfg.low_opacity_min_fraction)
    actions_mod.save_actions(acts, out_path)
    return Path(out_path)


def stage_segment(cfg: PipelineConfig, detections_path: str | Path,
                  manifest_path: str | Path | None,
                  out_path: str | Path) -> Path:
    per_frame, _ = _load_detections(cfg, detections_path, manifest_path)
    filtered = actions_mod.filter_confidence(per_frame,
                                             cfg.confidence_threshold)
    groups = []
    for run in actions_mod.build_runs(filtered, cfg.min_span_frames):
        groups.extend(actions_mod.segment_run(run, cfg.link_margin_px))
    doc = actions_mod.groups_to_doc(groups)
    Path(out_path).write_text(json.dumps(doc, indent=2) + "\n")
    return Path(out_path)


def stage_generate(cfg: PipelineConfig, trace_path: str | Path,
                   meta: VideoMeta, out_path: str | Path) -> Path:
    acts = actions_mod.load_actions(trace_path)
    rep_script = script_mod.generate(acts, meta)
    script_mod.save_script(rep_script, out_path, cfg.profile())
    return Path(out_path)


def stage_simulate(cfg: PipelineConfig, script_path: str | Path,
                   out_path: str | Path) -> Path:
    rep_script = script_mod.parse_script(script_path, cfg.profile(),
                                         cfg.tap_max_frames)
    trace = simulate_mod.simulate(rep_script, cfg.spatial_radius_px,
                                  cfg.tap_max_frames)
    acts = simulate_mod.derived_actions(trace)
    actions_mod.save_actions(acts, out_path)
    return Path(out_path)


def evaluate_traces(pred_path: str | Path, truth_path: str | Path) -> dict:
    pred = actions_mod.load_actions(pred_path)
    truth = actions_mod.load_actions(truth_path)
    report = metrics_mod.sequence_report([a.kind for a in pred],
                                         [a.kind for a in truth])
    return report.to_doc()


def evaluate_detections(pred_path: str | Path, truth_path: str | Path,
                        iou_threshold: float,
                        manifest_path: str | Path | None = None) -> dict:
    pred_doc = json.loads(Path(pred_path).read_text())
    truth_doc = json.loads(Path(truth_path).read_text())
    if manifest_path:
        meta = meta_from_manifest(manifest_path)
    else:
        meta = meta_from_detection_doc(truth_doc)
    pred = detect_mod.doc_to_detections(pred_doc, meta)
    truth = detect_mod.doc_to_detections(truth_doc, meta)
    truth_boxes = [[d.bbox for d in dets] for dets in truth]
    report = metrics_mod.detection_report(pred, truth_boxes, iou_threshold)
    return metrics_mod.match_report_to_doc(report)


def run_pipeline(cfg: PipelineConfig) -> dict:
    """Chain every stage over the configured recording."""
    if not cfg.frames:
        raise ConfigError("pipeline needs a frame manifest ('frames')")
    out_dir = Path(cfg.output)
    out_dir.mkdir(parents=True, exist_ok=True)

    normalized = stage_ingest(cfg.frames, out_dir)
    meta = meta_from_manifest(normalized)

    detections_path = out_dir / "detections.json"
    if cfg.backend == "template":
        stage_detect(cfg, normalized, detections_path)
    elif cfg.backend == "ingest":
        if not cfg.detections:
            raise ConfigError("ingest backend needs 'detections'")
        per_frame, _ = _load_detections(cfg, cfg.detections, normalized)
        detect_mod.export_detections(per_frame, meta, detections_path)
    else:
        raise ConfigError(f"unknown backend {cfg.backend!r}")

    trace_path = out_dir / "actions.json"
    stage_classify(cfg, detections_path, normalized, trace_path)

    script_path = out_dir / "replay.log"
    stage_generate(cfg, trace_path, meta, script_path)

    derived_path = out_dir / "derived_actions.json"
    stage_simulate(cfg, script_path, derived_path)

    acts = actions_mod.load_actions(trace_path)
    kinds = [a.kind for a in acts]
    summary = {
        "frames": meta.frame_count,
        "width": meta.width,
        "height": meta.height,
        "actions": {k: kinds.count(k) for k in sorted(set(kinds))},
        "action_sequence": kinds,
        "artifacts": {
            "normalized_manifest": str(normalized),
            "detections": str(detections_path),
            "actions": str(trace_path),
            "script": str(script_path),
            "derived_actions": str(derived_path),
        },
    }
    if cfg.truth:
        summary["evaluation"] = evaluate_traces(trace_path, cfg.truth)
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary
