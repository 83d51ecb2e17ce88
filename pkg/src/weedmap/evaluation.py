"""Detection-quality metrics: greedy matching, per-class AP, precision/recall, mAP@50."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from .geometry import BoundingBox, DetectionFrame, WeedClass, iou
from .ingest import FrameManifest, parse_detection_log
from .ioutil import PathLike, atomic_write_text


class FrameSetMismatchError(ValueError):
    """Prediction and ground-truth streams cover different frame-index sets."""


@dataclass(frozen=True)
class GroundTruthBox:
    box: BoundingBox
    cls: WeedClass


@dataclass(frozen=True)
class GroundTruthFrame:
    frame_index: int
    boxes: tuple[GroundTruthBox, ...]


def ground_truth_from_frames(frames: Sequence[DetectionFrame]) -> list[GroundTruthFrame]:
    """Reinterpret detection frames (confidence ignored) as ground truth."""
    return [
        GroundTruthFrame(
            frame_index=f.frame_index,
            boxes=tuple(GroundTruthBox(d.box, d.cls) for d in f.detections),
        )
        for f in frames
    ]


def load_ground_truth(path: PathLike, manifest: FrameManifest) -> list[GroundTruthFrame]:
    return ground_truth_from_frames(parse_detection_log(path, manifest))


@dataclass(frozen=True)
class MatchRecord:
    """One scored prediction with its TP/FP verdict and original position."""

    cls: WeedClass
    confidence: float
    is_tp: bool
    pred_index: int


@dataclass(frozen=True)
class FrameMatches:
    records: tuple[MatchRecord, ...]
    unmatched_gt: Mapping[WeedClass, int]


def match_detections(
    preds: DetectionFrame, gts: GroundTruthFrame, iou_threshold: float
) -> FrameMatches:
    """Greedy per-class matching of one frame's predictions to ground truth.

    Predictions are visited in descending confidence (ties: input order).
    Each prediction claims the unmatched same-class ground-truth box with the
    highest IoU when that IoU reaches the threshold, otherwise it is a false
    positive. Equal-IoU candidates resolve to the earlier ground-truth index.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"iou threshold must be in (0, 1], got {iou_threshold}")
    gt_taken = [False] * len(gts.boxes)
    order = sorted(range(len(preds.detections)), key=lambda i: -preds.detections[i].confidence)
    records = []
    for i in order:
        det = preds.detections[i]
        best_iou = 0.0
        best_gt: Optional[int] = None
        for g, gt in enumerate(gts.boxes):
            if gt_taken[g] or gt.cls is not det.cls:
                continue
            overlap = iou(det.box, gt.box)
            if overlap > best_iou:
                best_iou = overlap
                best_gt = g
        is_tp = best_gt is not None and best_iou >= iou_threshold
        if is_tp:
            gt_taken[best_gt] = True
        records.append(
            MatchRecord(cls=det.cls, confidence=det.confidence, is_tp=is_tp, pred_index=i)
        )
    unmatched = {cls: 0 for cls in WeedClass}
    for g, gt in enumerate(gts.boxes):
        if not gt_taken[g]:
            unmatched[gt.cls] += 1
    return FrameMatches(records=tuple(records), unmatched_gt=unmatched)


def average_precision(matches: Sequence[tuple[float, bool]], gt_count: int) -> float:
    """All-point interpolated AP from (confidence, is_tp) pairs sorted descending.

    The precision curve is made monotone non-increasing from the right and
    integrated over recall. Zero ground truth yields 0 by convention.
    """
    if gt_count < 0:
        raise ValueError(f"negative ground-truth count: {gt_count}")
    if gt_count == 0 or not matches:
        return 0.0
    tp = 0
    fp = 0
    recalls = []
    precisions = []
    for _conf, is_tp in matches:
        if is_tp:
            tp += 1
        else:
            fp += 1
        recalls.append(tp / gt_count)
        precisions.append(tp / (tp + fp))
    # Envelope: precision at each point becomes the max to its right.
    for i in range(len(precisions) - 2, -1, -1):
        precisions[i] = max(precisions[i], precisions[i + 1])
    ap = recalls[0] * precisions[0]
    for i in range(1, len(recalls)):
        ap += (recalls[i] - recalls[i - 1]) * precisions[i]
    return ap


@dataclass(frozen=True)
class ClassMetrics:
    ap: float
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int


@dataclass(frozen=True)
class EvalReport:
    per_class: Mapping[WeedClass, ClassMetrics]
    map50: float
    iou_threshold: float

    def to_json_dict(self) -> dict:
        return {
            "per_class": {
                cls.value: {
                    "ap": m.ap,
                    "precision": m.precision,
                    "recall": m.recall,
                    "tp": m.tp,
                    "fp": m.fp,
                    "fn": m.fn,
                }
                for cls, m in self.per_class.items()
            },
            "map50": self.map50,
            "iou_threshold": self.iou_threshold,
        }


def evaluate(
    preds: Sequence[DetectionFrame],
    gts: Sequence[GroundTruthFrame],
    iou_threshold: float = 0.5,
) -> EvalReport:
    """Aggregate matching over all frames into per-class metrics and mAP.

    mAP averages AP over the classes present in ground truth. Confidence ties
    in the global ranking resolve by frame index, then within-frame order.
    """
    pred_indices = {f.frame_index for f in preds}
    gt_indices = {f.frame_index for f in gts}
    if pred_indices != gt_indices:
        missing = sorted(gt_indices - pred_indices)[:5]
        extra = sorted(pred_indices - gt_indices)[:5]
        raise FrameSetMismatchError(
            f"frame sets differ (missing from preds: {missing}, extra: {extra})"
        )
    if len(pred_indices) != len(preds) or len(gt_indices) != len(gts):
        raise FrameSetMismatchError("duplicate frame indices in a stream")

    gt_by_index = {f.frame_index: f for f in gts}
    per_class_records: dict[WeedClass, list[tuple[float, int, int, bool]]] = {
        cls: [] for cls in WeedClass
    }
    fn_counts = {cls: 0 for cls in WeedClass}
    gt_counts = {cls: 0 for cls in WeedClass}

    for frame in sorted(preds, key=lambda f: f.frame_index):
        gt_frame = gt_by_index[frame.frame_index]
        for gt in gt_frame.boxes:
            gt_counts[gt.cls] += 1
        matches = match_detections(frame, gt_frame, iou_threshold)
        for record in matches.records:
            per_class_records[record.cls].append(
                (record.confidence, frame.frame_index, record.pred_index, record.is_tp)
            )
        for cls in WeedClass:
            fn_counts[cls] += matches.unmatched_gt[cls]

    per_class = {}
    aps_present = []
    for cls in WeedClass:
        ranked = sorted(per_class_records[cls], key=lambda r: (-r[0], r[1], r[2]))
        flags = [(conf, is_tp) for conf, _fi, _pi, is_tp in ranked]
        tp = sum(1 for _c, t in flags if t)
        fp = len(flags) - tp
        fn = fn_counts[cls]
        ap = average_precision(flags, gt_counts[cls])
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        per_class[cls] = ClassMetrics(ap=ap, precision=precision, recall=recall, tp=tp, fp=fp, fn=fn)
        if gt_counts[cls] > 0:
            aps_present.append(ap)

    map50 = sum(aps_present) / len(aps_present) if aps_present else 0.0
    return EvalReport(per_class=per_class, map50=map50, iou_threshold=iou_threshold)


def write_report(report: EvalReport, path: PathLike) -> None:
    atomic_write_text(path, json.dumps(report.to_json_dict(), separators=(",", ":")) + "\n")
