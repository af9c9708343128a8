"""Detection- and scenario-level accuracy metrics.

Detection quality is scored by greedy IoU matching (single class, so the
precision-style score is plain TP / (TP + FP) and recall is TP / k).
Scenario fidelity compares predicted and ground-truth action-kind sequences
with edit distance, longest common subsequence, and order-agnostic per-kind
precision/recall.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .types import BoundingBox, Detection

DEFAULT_IOU_BREAKDOWN = (0.5, 0.75, 0.9)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    x0 = max(a.x, b.x)
    y0 = max(a.y, b.y)
    x1 = min(a.x + a.w, b.x + b.w)
    y1 = min(a.y + a.h, b.y + b.h)
    if x1 <= x0 or y1 <= y0:
        return 0.0
    inter = (x1 - x0) * (y1 - y0)
    return inter / (a.area() + b.area() - inter)


@dataclass
class MatchReport:
    tp: int
    fp: int
    fn: int
    mean_ap: float          # TP / (TP + FP); 1.0 when nothing was predicted wrongly
    average_recall: float   # TP / k over k ground-truth boxes
    iou_threshold: float
    by_threshold: dict[float, dict] = field(default_factory=dict)


def _match_counts(pred: list[list[Detection]],
                  truth: list[list[BoundingBox]],
                  threshold: float) -> tuple[int, int, int]:
    tp = fp = 0
    k = sum(len(t) for t in truth)
    for frame_pred, frame_truth in zip(pred, truth):
        used = [False] * len(frame_truth)
        ranked = sorted(frame_pred,
                        key=lambda d: (-d.confidence, d.bbox.y, d.bbox.x))
        for det in ranked:
            best, best_iou = -1, threshold
            for i, box in enumerate(frame_truth):
                if used[i]:
                    continue
                v = iou(det.bbox, box)
                if v >= best_iou:
                    best, best_iou = i, v
            if best >= 0:
                used[best] = True
                tp += 1
            else:
                fp += 1
    return tp, fp, k - tp


def detection_report(pred: list[list[Detection]],
                     truth: list[list[BoundingBox]],
                     iou_threshold: float = 0.5,
                     breakdown: tuple[float, ...] = DEFAULT_IOU_BREAKDOWN
                     ) -> MatchReport:
    """Greedy confidence-ordered matching of predictions to ground truth.

    ``pred`` and ``truth`` must share the frame index space; a prediction is
    a true positive iff it overlaps a still-unmatched truth box at IoU at or
    above the threshold.
    """
    if len(pred) != len(truth):
        raise ValueError(
            f"prediction covers {len(pred)} frames, truth {len(truth)}")
    tp, fp, fn = _match_counts(pred, truth, iou_threshold)
    k = tp + fn
    report = MatchReport(
        tp=tp, fp=fp, fn=fn,
        mean_ap=tp / (tp + fp) if tp + fp else 1.0,
        average_recall=tp / k if k else 1.0,
        iou_threshold=iou_threshold,
    )
    for th in sorted(set(breakdown) | {iou_threshold}):
        t_tp, t_fp, t_fn = _match_counts(pred, truth, th)
        report.by_threshold[th] = {
            "tp": t_tp, "fp": t_fp, "fn": t_fn,
            "mean_ap": t_tp / (t_tp + t_fp) if t_tp + t_fp else 1.0,
            "average_recall": t_tp / (t_tp + t_fn) if t_tp + t_fn else 1.0,
        }
    return report


def levenshtein(pred, truth) -> int:
    """Unit-cost edit distance between two sequences."""
    a, b = list(pred), list(truth)
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, sa in enumerate(a, start=1):
        current = [i]
        for j, sb in enumerate(b, start=1):
            current.append(min(
                previous[j] + 1,
                current[j - 1] + 1,
                previous[j - 1] + (sa != sb),
            ))
        previous = current
    return previous[-1]


def lcs(pred, truth) -> tuple[int, float]:
    """Longest common subsequence length and its fraction of the truth."""
    a, b = list(pred), list(truth)
    previous = [0] * (len(b) + 1)
    for sa in a:
        current = [0]
        for j, sb in enumerate(b, start=1):
            if sa == sb:
                current.append(previous[j - 1] + 1)
            else:
                current.append(max(previous[j], current[j - 1]))
        previous = current
    length = previous[-1]
    if not b:
        fraction = 1.0 if not a else 0.0
    else:
        fraction = length / len(b)
    return length, fraction


@dataclass
class SequenceReport:
    levenshtein: int
    lcs_length: int
    lcs_fraction: float
    precision: dict[str, float]
    recall: dict[str, float]
    overall_precision: float
    overall_recall: float

    def to_doc(self) -> dict:
        return {
            "levenshtein": self.levenshtein,
            "lcs_length": self.lcs_length,
            "lcs_fraction": round(self.lcs_fraction, 6),
            "precision": {k: round(v, 6) for k, v in self.precision.items()},
            "recall": {k: round(v, 6) for k, v in self.recall.items()},
            "overall_precision": round(self.overall_precision, 6),
            "overall_recall": round(self.overall_recall, 6),
        }


def sequence_report(pred, truth) -> SequenceReport:
    """Compare predicted and ground-truth kind sequences.

    Precision/recall treat each sequence as a bag per kind; overall values
    are macro-averages over the kinds present in the truth.
    """
    pred = list(pred)
    truth = list(truth)
    pred_bag = Counter(pred)
    truth_bag = Counter(truth)
    precision: dict[str, float] = {}
    recall: dict[str, float] = {}
    for kind in sorted(set(pred_bag) | set(truth_bag)):
        overlap = min(pred_bag[kind], truth_bag[kind])
        precision[kind] = overlap / pred_bag[kind] if pred_bag[kind] else 0.0
        recall[kind] = overlap / truth_bag[kind] if truth_bag[kind] else 0.0
    truth_kinds = sorted(truth_bag)
    if truth_kinds:
        overall_p = sum(precision[k] for k in truth_kinds) / len(truth_kinds)
        overall_r = sum(recall[k] for k in truth_kinds) / len(truth_kinds)
    else:
        overall_p = overall_r = 1.0 if not pred else 0.0
    length, fraction = lcs(pred, truth)
    return SequenceReport(
        levenshtein=levenshtein(pred, truth),
        lcs_length=length,
        lcs_fraction=fraction,
        precision=precision,
        recall=recall,
        overall_precision=overall_p,
        overall_recall=overall_r,
    )


def aggregate_sequence_reports(reports: list[SequenceReport]) -> dict:
    """Corpus-level roll-up of per-video sequence reports."""
    if not reports:
        return {"videos": 0}
    n = len(reports)
    return {
        "videos": n,
        "mean_levenshtein": sum(r.levenshtein for r in reports) / n,
        "exact_match_fraction": sum(r.levenshtein == 0 for r in reports) / n,
        "mean_lcs_fraction": sum(r.lcs_fraction for r in reports) / n,
        "mean_overall_precision": sum(r.overall_precision for r in reports) / n,
        "mean_overall_recall": sum(r.overall_recall for r in reports) / n,
    }


def match_report_to_doc(report: MatchReport) -> dict:
    return {
        "tp": report.tp, "fp": report.fp, "fn": report.fn,
        "mean_ap": round(report.mean_ap, 6),
        "average_recall": round(report.average_recall, 6),
        "iou_threshold": report.iou_threshold,
        "by_threshold": {
            str(th): {k: (round(v, 6) if isinstance(v, float) else v)
                      for k, v in row.items()}
            for th, row in report.by_threshold.items()},
    }
