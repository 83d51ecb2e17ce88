"""Benchmark harness: repeated timed pipeline passes, mean/FPS aggregation.

Timing covers the full pipeline pass on a monotonic clock; runs execute
sequentially with no warm-up by default. Presentation rounds half-up to two
decimals; stored values stay exact.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Callable, Iterable, Sequence

from .geometry import DetectionFrame, filter_by_confidence
from .ioutil import PathLike, atomic_write_text


class BenchmarkError(Exception):
    """A benchmarked run failed; carries the 1-based run index."""

    def __init__(self, run_index: int, cause: BaseException) -> None:
        super().__init__(f"pipeline failed on run {run_index}: {cause}")
        self.run_index = run_index


def time_runs(
    runnable: Callable[[], object], repeats: int = 3, warmup: int = 0
) -> list[float]:
    """Wall-clock duration of `repeats` sequential passes of the runnable."""
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    for _ in range(warmup):
        runnable()
    durations = []
    for run_index in range(1, repeats + 1):
        start = time.perf_counter()
        try:
            runnable()
        except Exception as exc:
            raise BenchmarkError(run_index, exc) from exc
        durations.append(time.perf_counter() - start)
    return durations


def aggregate(runs: Sequence[float]) -> float:
    """Exact arithmetic mean of the run durations."""
    if not runs:
        raise ValueError("cannot aggregate an empty run list")
    return sum(runs) / len(runs)


def present_2dp(value: float) -> float:
    """Round half-up to 2 decimals, for report tables."""
    return float(Decimal(repr(value)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def frames_with_detections(frames: Iterable[DetectionFrame], confidence: float) -> int:
    """Frames with at least one detection at or above the confidence threshold."""
    return sum(
        1 for frame in frames if filter_by_confidence(frame, confidence).detections
    )


@dataclass(frozen=True)
class BenchmarkReport:
    model_label: str
    runs_s: tuple[float, ...]
    frame_count: int
    frames_with_detections: int
    confidence: float

    def __post_init__(self) -> None:
        if self.frames_with_detections > self.frame_count:
            raise ValueError("frames_with_detections exceeds frame count")

    @property
    def mean_s(self) -> float:
        return aggregate(self.runs_s)

    @property
    def fps(self) -> float:
        mean = self.mean_s
        return self.frame_count / mean if mean > 0 else 0.0

    def to_json_dict(self) -> dict:
        return {
            "model": self.model_label,
            "runs_s": list(self.runs_s),
            "mean_s": self.mean_s,
            "fps": self.fps,
            "frames": self.frame_count,
            "frames_with_detections": self.frames_with_detections,
            "confidence": self.confidence,
        }


def write_report(report: BenchmarkReport, path: PathLike) -> None:
    atomic_write_text(path, json.dumps(report.to_json_dict(), separators=(",", ":")) + "\n")
