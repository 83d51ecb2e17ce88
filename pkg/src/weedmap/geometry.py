"""Shared detection domain types and box-level algorithms (IoU, filtering, NMS)."""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Optional, Sequence


class WeedClass(Enum):
    """Detection classes: three density categories plus the single seedling class.

    Low/Medium/High form a total severity order (1 < 2 < 3); the seedling
    class carries the lowest severity rank since it is not a density level.
    """

    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"
    SEEDLING = "seedling"

    @property
    def severity(self) -> int:
        return _SEVERITY[self]

    @classmethod
    def from_name(cls, name: str) -> "WeedClass":
        try:
            return cls(name)
        except ValueError:
            raise ValueError(f"unknown class name: {name!r}") from None


_SEVERITY = {
    WeedClass.LOW: 1,
    WeedClass.MEDIUM: 2,
    WeedClass.HIGH: 3,
    WeedClass.SEEDLING: 1,
}

# Deterministic tie-break order for "dominant class" decisions: higher severity
# wins; at equal severity a density class beats the seedling class.
DOMINANCE_ORDER = (WeedClass.SEEDLING, WeedClass.LOW, WeedClass.MEDIUM, WeedClass.HIGH)


def dominance_key(cls: WeedClass) -> tuple[int, int]:
    return (cls.severity, DOMINANCE_ORDER.index(cls))


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in normalized image coordinates.

    Origin is the top-left corner, x grows rightward, y grows downward and
    all four coordinates lie in [0, 1] with min <= max on both axes.
    """

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.x_min <= self.x_max <= 1.0):
            raise ValueError(f"invalid x extent: [{self.x_min}, {self.x_max}]")
        if not (0.0 <= self.y_min <= self.y_max <= 1.0):
            raise ValueError(f"invalid y extent: [{self.y_min}, {self.y_max}]")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def as_xyxy(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


@dataclass(frozen=True)
class Detection:
    """One classified, scored box."""

    box: BoundingBox
    cls: WeedClass
    confidence: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence out of range: {self.confidence}")


@dataclass(frozen=True)
class DetectionFrame:
    """All detections of one frame; the unit flowing through the pipeline."""

    frame_index: int
    timestamp_ms: int
    detections: tuple[Detection, ...] = ()

    def __post_init__(self) -> None:
        if self.frame_index < 0:
            raise ValueError(f"negative frame index: {self.frame_index}")
        if self.timestamp_ms < 0:
            raise ValueError(f"negative timestamp: {self.timestamp_ms}")
        if not isinstance(self.detections, tuple):
            object.__setattr__(self, "detections", tuple(self.detections))


def intersect(a: BoundingBox, b: BoundingBox) -> Optional[BoundingBox]:
    """Intersection box of a and b, or None when they do not overlap."""
    x0 = max(a.x_min, b.x_min)
    y0 = max(a.y_min, b.y_min)
    x1 = min(a.x_max, b.x_max)
    y1 = min(a.y_max, b.y_max)
    if x0 > x1 or y0 > y1:
        return None
    return BoundingBox(x0, y0, x1, y1)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; 0 when the union has zero area."""
    x0 = max(a.x_min, b.x_min)
    y0 = max(a.y_min, b.y_min)
    x1 = min(a.x_max, b.x_max)
    y1 = min(a.y_max, b.y_max)
    inter = max(0.0, x1 - x0) * max(0.0, y1 - y0)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def union_area(boxes: Iterable[BoundingBox]) -> float:
    """Exact area of the union of boxes via a coordinate sweep over x edges.

    Resolution-independent: no sampling, so overlapping boxes are never
    double counted.
    """
    rects = [b for b in boxes if b.area > 0.0]
    if not rects:
        return 0.0
    xs = sorted({b.x_min for b in rects} | {b.x_max for b in rects})
    total = 0.0
    for x0, x1 in zip(xs, xs[1:]):
        if x1 <= x0:
            continue
        # Union of y-intervals of all rects spanning this x slab.
        spans = sorted(
            (b.y_min, b.y_max) for b in rects if b.x_min <= x0 and b.x_max >= x1
        )
        covered = 0.0
        cur_lo = cur_hi = None
        for lo, hi in spans:
            if cur_hi is None or lo > cur_hi:
                if cur_hi is not None:
                    covered += cur_hi - cur_lo
                cur_lo, cur_hi = lo, hi
            elif hi > cur_hi:
                cur_hi = hi
        if cur_hi is not None:
            covered += cur_hi - cur_lo
        total += covered * (x1 - x0)
    return total


def filter_by_confidence(frame: DetectionFrame, threshold: float) -> DetectionFrame:
    """Keep detections with confidence >= threshold (inclusive), order preserved."""
    if not (0.0 <= threshold <= 1.0):
        raise ValueError(f"threshold out of range: {threshold}")
    kept = tuple(d for d in frame.detections if d.confidence >= threshold)
    if len(kept) == len(frame.detections):
        return frame
    return replace(frame, detections=kept)


def nms(detections: Sequence[Detection], iou_threshold: float = 0.45) -> list[Detection]:
    """Greedy class-agnostic non-maximum suppression.

    Candidates are visited in descending confidence (ties resolved by input
    order); each kept box suppresses remaining boxes overlapping it with
    IoU strictly above the threshold. Kept boxes are returned in visit order.
    """
    if not (0.0 <= iou_threshold <= 1.0):
        raise ValueError(f"iou threshold out of range: {iou_threshold}")
    order = sorted(range(len(detections)), key=lambda i: -detections[i].confidence)
    suppressed = [False] * len(detections)
    kept: list[Detection] = []
    for pos, i in enumerate(order):
        if suppressed[i]:
            continue
        top = detections[i]
        kept.append(top)
        for j in order[pos + 1 :]:
            if not suppressed[j] and iou(top.box, detections[j].box) > iou_threshold:
                suppressed[j] = True
    return kept
