"""Staged replay/inference pipeline with bounded FIFO hand-off between stages.

Stages: manifest producer -> detector -> render/accumulate sink, connected by
bounded queues (back-pressure blocks producers). One thread per stage and one
detector instance keep frame order intact end-to-end; the sink owns all file
output and the density grid (single-writer).
"""

from __future__ import annotations

import logging
import queue
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .bench import frames_with_detections
from .density import CoverageGrid, coverage_density_grid
from .detector import DetectorBackend
from .geomap import DensityGrid, LocalProjection, TrackSpanError, interpolate_fix
from .geometry import DetectionFrame, filter_by_confidence
from .ingest import FrameManifest, GeoTrack, encode_log_line
from .ioutil import atomic_output
from .overlay import blank_canvas, rasterize, render_overlay, write_ppm

log = logging.getLogger(__name__)

_DONE = object()


@dataclass
class PipelineConfig:
    confidence: float = 0.70
    cell_size_m: float = 1.0
    coverage_dims: Optional[tuple[int, int]] = None
    queue_capacity: int = 16
    write_overlays: bool = True


@dataclass
class PipelineResult:
    frame_count: int = 0
    detection_count: int = 0
    frames_with_detections: int = 0
    frames_outside_track: int = 0
    grid: Optional[DensityGrid] = None
    frames: list[DetectionFrame] = field(default_factory=list)


class _Stop(Exception):
    """Internal: another stage failed, unwind quietly."""


class _Channel:
    """Bounded FIFO whose blocking operations abort when the pipeline stops."""

    def __init__(self, capacity: int, stop: threading.Event) -> None:
        self._queue: queue.Queue = queue.Queue(maxsize=capacity)
        self._stop = stop

    def put(self, item) -> None:
        while True:
            if self._stop.is_set():
                raise _Stop()
            try:
                self._queue.put(item, timeout=0.05)
                return
            except queue.Full:
                continue

    def get(self):
        while True:
            if self._stop.is_set():
                raise _Stop()
            try:
                return self._queue.get(timeout=0.05)
            except queue.Empty:
                continue


def run_pipeline(
    manifest: FrameManifest,
    backend: DetectorBackend,
    config: PipelineConfig,
    out_dir: Optional[Path] = None,
    image_root: Optional[Path] = None,
    track: Optional[GeoTrack] = None,
) -> PipelineResult:
    """One full pass: detect, filter, render, accumulate, write outputs.

    All file outputs are atomic; a failed pass leaves no partial files.
    """
    stop = threading.Event()
    errors: list[BaseException] = []
    to_detect = _Channel(config.queue_capacity, stop)
    to_sink = _Channel(config.queue_capacity, stop)

    def guarded(fn):
        def run() -> None:
            try:
                fn()
            except _Stop:
                pass
            except BaseException as exc:
                errors.append(exc)
                stop.set()

        return run

    def produce() -> None:
        for entry in manifest.entries:
            to_detect.put(entry)
        to_detect.put(_DONE)

    def detect() -> None:
        while True:
            entry = to_detect.get()
            if entry is _DONE:
                to_sink.put(_DONE)
                return
            frame = backend.detect(entry.frame_index, entry.timestamp_ms, entry.image_path)
            to_sink.put((entry, filter_by_confidence(frame, config.confidence)))

    producer = threading.Thread(target=guarded(produce), name="pipeline-produce")
    detector = threading.Thread(target=guarded(detect), name="pipeline-detect")

    result = PipelineResult()
    grid: Optional[DensityGrid] = None
    if track is not None:
        first = track.fixes[0]
        grid = DensityGrid(
            LocalProjection(first.lat_deg, first.lon_deg), cell_size_m=config.cell_size_m
        )

    try:
        producer.start()
        detector.start()
        with _sink_outputs(out_dir, config) as sink:
            while True:
                item = to_sink.get()
                if item is _DONE:
                    break
                entry, frame = item
                result.frame_count += 1
                result.detection_count += len(frame.detections)
                if frame.detections:
                    result.frames_with_detections += 1
                result.frames.append(frame)
                sink.emit(entry, frame, manifest, image_root)
                if grid is not None:
                    try:
                        fix = interpolate_fix(track, entry.timestamp_ms)
                    except TrackSpanError:
                        result.frames_outside_track += 1
                    else:
                        grid.accumulate(fix, frame)
    except _Stop:
        pass
    except BaseException as exc:
        errors.append(exc)
        raise
    finally:
        stop.set()
        producer.join()
        detector.join()

    if errors:
        raise errors[0]
    result.grid = grid
    return result


class _SinkOutputs:
    """Owns the streaming output files of one pipeline pass."""

    def __init__(self, out_dir: Optional[Path], config: PipelineConfig) -> None:
        self.out_dir = out_dir
        self.config = config
        self._stack = None
        self.detections_file = None
        self.layers_file = None
        self.coverage_file = None

    def __enter__(self) -> "_SinkOutputs":
        from contextlib import ExitStack

        self._stack = ExitStack()
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            self.detections_file = self._stack.enter_context(
                atomic_output(self.out_dir / "detections.jsonl")
            )
            if self.config.write_overlays:
                (self.out_dir / "overlay").mkdir(parents=True, exist_ok=True)
                self.layers_file = self._stack.enter_context(
                    atomic_output(self.out_dir / "overlay" / "layers.jsonl")
                )
            if self.config.coverage_dims is not None:
                self.coverage_file = self._stack.enter_context(
                    atomic_output(self.out_dir / "coverage.jsonl")
                )
        return self

    def __exit__(self, *exc_info) -> None:
        self._stack.__exit__(*exc_info)

    def emit(
        self,
        entry,
        frame: DetectionFrame,
        manifest: FrameManifest,
        image_root: Optional[Path],
    ) -> None:
        import json

        if self.detections_file is not None:
            self.detections_file.write(encode_log_line(frame))
            self.detections_file.write("\n")
        if self.layers_file is not None:
            layer = render_overlay(frame, manifest.image_size)
            doc = {"i": frame.frame_index, **layer.to_json_dict()}
            self.layers_file.write(json.dumps(doc, separators=(",", ":")))
            self.layers_file.write("\n")
            base = _load_base_image(entry.image_path, manifest.image_size, image_root)
            write_ppm(
                rasterize(base, layer),
                self.out_dir / "overlay" / f"frame_{frame.frame_index:06d}.ppm",
            )
        if self.coverage_file is not None:
            cols, rows = self.config.coverage_dims
            cov = coverage_density_grid(frame, cols, rows)
            doc = {"i": frame.frame_index, **cov.to_json_dict()}
            self.coverage_file.write(json.dumps(doc, separators=(",", ":")))
            self.coverage_file.write("\n")


def _sink_outputs(out_dir: Optional[Path], config: PipelineConfig) -> _SinkOutputs:
    return _SinkOutputs(out_dir, config)


def _load_base_image(
    image_path: str, expected_size: tuple[int, int], image_root: Optional[Path]
) -> np.ndarray:
    """Base raster for the overlay; a missing file falls back to black canvas
    so log-only replays still render."""
    path = Path(image_path)
    if image_root is not None and not path.is_absolute():
        path = image_root / path
    if not path.exists():
        return blank_canvas(expected_size)
    from .dataset import load_image

    pixels = load_image(path)
    width, height = expected_size
    if pixels.shape[:2] != (height, width):
        raise ValueError(
            f"{path}: image is {pixels.shape[1]}x{pixels.shape[0]}, manifest says {width}x{height}"
        )
    return pixels
