"""Temporal IoU, per-class average precision, and mAP across tIoU thresholds."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Literal, Mapping, Optional, Sequence

import numpy as np

from .core import Detection, GroundTruth


def tiou(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Intersection over union of two half-open intervals; 0 when disjoint."""
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union if union > 0 else 0.0


def _default_tious() -> tuple[float, ...]:
    return tuple(round(0.1 * i, 10) for i in range(1, 8))


@dataclass(frozen=True)
class EvalConfig:
    tiou_thresholds: tuple[float, ...] = field(default_factory=_default_tious)
    interpolation: Literal["all", "11point"] = "all"

    def __post_init__(self):
        object.__setattr__(self, "tiou_thresholds", tuple(float(t) for t in self.tiou_thresholds))
        if not self.tiou_thresholds or not all(0 < t <= 1 for t in self.tiou_thresholds):
            raise ValueError("tiou_thresholds must be a nonempty list of values in (0, 1]")
        if self.interpolation not in ("all", "11point"):
            raise ValueError(f"unknown interpolation {self.interpolation!r}")


@dataclass(frozen=True)
class EvalReport:
    ap: dict[float, dict[int, float]]
    mean_ap: dict[float, float]
    average_map: float
    classes: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "tiou_thresholds": [float(t) for t in self.mean_ap],
            "classes": list(self.classes),
            "ap": {f"{t:g}": {str(c): v for c, v in per.items()} for t, per in self.ap.items()},
            "mAP": {f"{t:g}": v for t, v in self.mean_ap.items()},
            "average_mAP": self.average_map,
        }

    def format_table(self) -> str:
        thresholds = list(self.mean_ap)
        head = "tIoU   " + " ".join(f"{t:>6.2f}" for t in thresholds) + "    avg"
        row = "mAP(%) " + " ".join(f"{100 * self.mean_ap[t]:6.2f}" for t in thresholds)
        row += f" {100 * self.average_map:6.2f}"
        return head + "\n" + row


def _ranked(detections: Sequence[Detection]) -> list[Detection]:
    return sorted(detections, key=lambda d: (-d.score, d.start, d.end, d.video_id))


def average_precision(
    detections: Sequence[Detection],
    ground_truth: Sequence[tuple[str, float, float]],
    tiou_threshold: float,
    interpolation: str = "all",
) -> Optional[float]:
    """AP of one class.

    Detections are matched greedily in rank order (descending score, then
    earlier start); each takes the unmatched ground truth of its video with
    the highest tIoU if that tIoU reaches the threshold. Returns ``None``
    when there is neither ground truth nor a detection.
    """
    if not ground_truth:
        return None if not detections else 0.0
    by_video: dict[str, list[tuple[int, float, float]]] = defaultdict(list)
    for j, (vid, s, e) in enumerate(ground_truth):
        by_video[vid].append((j, s, e))
    matched = np.zeros(len(ground_truth), dtype=bool)
    hits = []
    for det in _ranked(detections):
        best_j, best_iou = -1, -1.0
        for j, s, e in by_video.get(det.video_id, ()):
            if matched[j]:
                continue
            iou = tiou((det.start, det.end), (s, e))
            if iou > best_iou:
                best_j, best_iou = j, iou
        if best_j >= 0 and best_iou >= tiou_threshold:
            matched[best_j] = True
            hits.append(True)
        else:
            hits.append(False)
    if not hits:
        return 0.0
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, len(hits) + 1)
    recall = tp / len(ground_truth)
    if interpolation == "11point":
        return float(np.mean([
            precision[recall >= r].max() if np.any(recall >= r) else 0.0
            for r in np.linspace(0.0, 1.0, 11)
        ]))
    return float(precision[np.asarray(hits)].sum() / len(ground_truth))


def evaluate(
    detections: Sequence[Detection],
    ground_truth: Mapping[str, Sequence[GroundTruth]],
    config: EvalConfig = EvalConfig(),
) -> EvalReport:
    """Per-class AP at every threshold; mAP averages classes present in the ground truth."""
    gt_by_class: dict[int, list[tuple[str, float, float]]] = defaultdict(list)
    for vid, items in ground_truth.items():
        for g in items:
            gt_by_class[g.label].append((vid, g.start, g.end))
    det_by_class: dict[int, list[Detection]] = defaultdict(list)
    for d in detections:
        det_by_class[d.label].append(d)
    gt_classes = tuple(sorted(gt_by_class))
    all_classes = sorted(set(gt_by_class) | set(det_by_class))

    ap: dict[float, dict[int, float]] = {}
    mean_ap: dict[float, float] = {}
    for thr in config.tiou_thresholds:
        per_class = {}
        for c in all_classes:
            value = average_precision(det_by_class.get(c, []), gt_by_class.get(c, []), thr,
                                      config.interpolation)
            if value is not None:
                per_class[c] = value
        ap[thr] = per_class
        mean_ap[thr] = float(np.mean([per_class[c] for c in gt_classes])) if gt_classes else 0.0
    average = float(np.mean(list(mean_ap.values())))
    return EvalReport(ap=ap, mean_ap=mean_ap, average_map=average, classes=gt_classes)
