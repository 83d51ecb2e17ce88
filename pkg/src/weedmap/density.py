"""Per-frame density products: class-count summaries and coverage grids."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional

from .geometry import (
    BoundingBox,
    DetectionFrame,
    WeedClass,
    dominance_key,
    intersect,
    union_area,
)


@dataclass(frozen=True)
class DensitySummary:
    """Detection counts per class for one frame."""

    counts: Mapping[WeedClass, int]
    dominant: Optional[WeedClass]
    total: int


def dominant_class(counts: Mapping[WeedClass, int]) -> Optional[WeedClass]:
    """Class with the highest count; ties resolve toward higher severity.

    Returns None when all counts are zero. At equal count and severity a
    density class beats the seedling class, keeping the result total.
    """
    if not any(counts.get(cls, 0) for cls in WeedClass):
        return None
    return max(WeedClass, key=lambda cls: (counts.get(cls, 0), dominance_key(cls)))


def frame_density_summary(frame: DetectionFrame) -> DensitySummary:
    counts = {cls: 0 for cls in WeedClass}
    for det in frame.detections:
        counts[det.cls] += 1
    total = len(frame.detections)
    return DensitySummary(counts=counts, dominant=dominant_class(counts), total=total)


class CoverageLevel(Enum):
    NONE = "none"
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"


@dataclass(frozen=True)
class CoverageThresholds:
    """Coverage-fraction cut points: (0, low_max] low, (low_max, medium_max] medium, above high."""

    low_max: float = 0.25
    medium_max: float = 0.6

    def classify(self, coverage: float) -> CoverageLevel:
        if coverage <= 0.0:
            return CoverageLevel.NONE
        if coverage <= self.low_max:
            return CoverageLevel.LOW
        if coverage <= self.medium_max:
            return CoverageLevel.MEDIUM
        return CoverageLevel.HIGH


DEFAULT_THRESHOLDS = CoverageThresholds()


@dataclass(frozen=True)
class CoverageGrid:
    """Row-major cells of box-union coverage fractions and their levels."""

    cols: int
    rows: int
    coverage: tuple[tuple[float, ...], ...]
    levels: tuple[tuple[CoverageLevel, ...], ...]

    def to_json_dict(self) -> dict:
        return {
            "cols": self.cols,
            "rows": self.rows,
            "coverage": [list(row) for row in self.coverage],
            "levels": [[level.value for level in row] for row in self.levels],
        }


def coverage_density_grid(
    frame: DetectionFrame,
    cols: int,
    rows: int,
    thresholds: CoverageThresholds = DEFAULT_THRESHOLDS,
) -> CoverageGrid:
    """Fraction of each grid cell covered by the union of detection boxes.

    Coverage is exact (coordinate sweep over box edges), so results do not
    depend on any raster resolution.
    """
    if cols < 1 or rows < 1:
        raise ValueError(f"grid must be at least 1x1, got {cols}x{rows}")
    boxes = [det.box for det in frame.detections]
    coverage_rows = []
    level_rows = []
    for r in range(rows):
        cov_row = []
        lvl_row = []
        for c in range(cols):
            cell = BoundingBox(c / cols, r / rows, (c + 1) / cols, (r + 1) / rows)
            clipped = [ib for b in boxes if (ib := intersect(b, cell)) is not None]
            fraction = min(1.0, union_area(clipped) / cell.area) if clipped else 0.0
            cov_row.append(fraction)
            lvl_row.append(thresholds.classify(fraction))
        coverage_rows.append(tuple(cov_row))
        level_rows.append(tuple(lvl_row))
    return CoverageGrid(
        cols=cols, rows=rows, coverage=tuple(coverage_rows), levels=tuple(level_rows)
    )
