"""Loading of frame manifests, detection logs and GPS tracks.

File formats:
  - frame manifest: JSON ``{"image_size":[W,H],"frames":[{"i","t_ms","path"},...]}``
  - detection log:  newline-delimited JSON, one object per frame:
    ``{"i":int,"t_ms":int,"boxes":[{"cls":"low|medium|high|seedling","conf":f,"xyxy":[x0,y0,x1,y1]}]}``
    with normalized coordinates; ``conf`` may be omitted (ground-truth files).
  - GPS track: CSV with header ``t_ms,lat,lon``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .geometry import BoundingBox, Detection, DetectionFrame, WeedClass
from .ioutil import PathLike, atomic_output


class IngestError(Exception):
    """Base for all parse/validation failures in this module."""


class SchemaError(IngestError):
    """Structurally malformed document or line."""


class OrderingError(IngestError):
    """Indices or timestamps out of order."""


class UnknownFrameError(IngestError):
    """A detection-log line references a frame index not in the manifest."""


class CoordinateError(IngestError):
    """Box coordinates outside [0,1] or inverted."""


class TooFewFixesError(IngestError):
    """A GPS track with fewer than the 2 fixes interpolation needs."""


@dataclass(frozen=True)
class ManifestEntry:
    frame_index: int
    timestamp_ms: int
    image_path: str


@dataclass(frozen=True)
class FrameManifest:
    """Ordered list of frames plus the common pixel size of the source images."""

    entries: tuple[ManifestEntry, ...]
    image_size: tuple[int, int]

    def __post_init__(self) -> None:
        w, h = self.image_size
        if w < 1 or h < 1:
            raise SchemaError(f"image size must be >= 1x1, got {w}x{h}")
        prev: Optional[ManifestEntry] = None
        for entry in self.entries:
            if entry.frame_index < 0 or entry.timestamp_ms < 0:
                raise SchemaError(f"negative index/timestamp in frame {entry.frame_index}")
            if prev is not None:
                if entry.frame_index <= prev.frame_index:
                    raise OrderingError(
                        f"frame indices not strictly increasing: {prev.frame_index} -> {entry.frame_index}"
                    )
                if entry.timestamp_ms < prev.timestamp_ms:
                    raise OrderingError(
                        f"timestamps decrease at frame {entry.frame_index}: "
                        f"{prev.timestamp_ms} -> {entry.timestamp_ms}"
                    )
            prev = entry

    def __len__(self) -> int:
        return len(self.entries)

    def index_set(self) -> set[int]:
        return {e.frame_index for e in self.entries}


@dataclass(frozen=True)
class GeoFix:
    timestamp_ms: int
    lat_deg: float
    lon_deg: float

    def __post_init__(self) -> None:
        if self.timestamp_ms < 0:
            raise SchemaError(f"negative fix timestamp: {self.timestamp_ms}")
        if not -90.0 <= self.lat_deg <= 90.0:
            raise SchemaError(f"latitude out of range: {self.lat_deg}")
        if not -180.0 <= self.lon_deg <= 180.0:
            raise SchemaError(f"longitude out of range: {self.lon_deg}")


@dataclass(frozen=True)
class GeoTrack:
    fixes: tuple[GeoFix, ...]

    def __post_init__(self) -> None:
        if len(self.fixes) < 2:
            raise TooFewFixesError(f"track needs at least 2 fixes, got {len(self.fixes)}")
        for a, b in zip(self.fixes, self.fixes[1:]):
            if b.timestamp_ms <= a.timestamp_ms:
                raise OrderingError(
                    f"fix timestamps not strictly increasing: {a.timestamp_ms} -> {b.timestamp_ms}"
                )

    @property
    def span_ms(self) -> tuple[int, int]:
        return (self.fixes[0].timestamp_ms, self.fixes[-1].timestamp_ms)


def load_manifest(path: PathLike) -> FrameManifest:
    """Parse and invariant-check a frame manifest."""
    with open(path, "r", encoding="utf-8") as handle:
        try:
            doc = json.load(handle)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON: {exc}") from exc
    try:
        size = doc["image_size"]
        raw_frames = doc["frames"]
        entries = tuple(
            ManifestEntry(int(f["i"]), int(f["t_ms"]), str(f["path"])) for f in raw_frames
        )
        image_size = (int(size[0]), int(size[1]))
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise SchemaError(f"{path}: malformed manifest: {exc}") from exc
    return FrameManifest(entries=entries, image_size=image_size)


def write_manifest(manifest: FrameManifest, path: PathLike) -> None:
    doc = {
        "image_size": list(manifest.image_size),
        "frames": [
            {"i": e.frame_index, "t_ms": e.timestamp_ms, "path": e.image_path}
            for e in manifest.entries
        ],
    }
    with atomic_output(path) as handle:
        json.dump(doc, handle, separators=(",", ":"))
        handle.write("\n")


def _box_from_obj(obj: dict, line_no: int) -> Detection:
    try:
        cls = WeedClass.from_name(obj["cls"])
        xyxy = obj["xyxy"]
        coords = (float(xyxy[0]), float(xyxy[1]), float(xyxy[2]), float(xyxy[3]))
        conf = float(obj.get("conf", 1.0))
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise SchemaError(f"line {line_no}: malformed box: {exc}") from exc
    try:
        box = BoundingBox(*coords)
    except ValueError as exc:
        raise CoordinateError(f"line {line_no}: {exc}") from exc
    try:
        return Detection(box=box, cls=cls, confidence=conf)
    except ValueError as exc:
        raise SchemaError(f"line {line_no}: {exc}") from exc


def parse_log_line(line: str, line_no: int = 0) -> DetectionFrame:
    """Decode one interchange detection-log line."""
    try:
        obj = json.loads(line)
        frame_index = int(obj["i"])
        timestamp_ms = int(obj["t_ms"])
        raw_boxes = obj["boxes"]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"line {line_no}: malformed log line: {exc}") from exc
    detections = tuple(_box_from_obj(b, line_no) for b in raw_boxes)
    return DetectionFrame(frame_index=frame_index, timestamp_ms=timestamp_ms, detections=detections)


def encode_log_line(frame: DetectionFrame, include_conf: bool = True) -> str:
    """Encode one frame as an interchange detection-log line (no newline)."""
    boxes = []
    for det in frame.detections:
        entry: dict = {"cls": det.cls.value}
        if include_conf:
            entry["conf"] = det.confidence
        entry["xyxy"] = list(det.box.as_xyxy())
        boxes.append(entry)
    return json.dumps(
        {"i": frame.frame_index, "t_ms": frame.timestamp_ms, "boxes": boxes},
        separators=(",", ":"),
    )


def iter_log_frames(path: PathLike) -> Iterable[tuple[int, DetectionFrame]]:
    """Yield (line_no, frame) for every non-empty line of a detection log."""
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            yield line_no, parse_log_line(line, line_no)


def parse_detection_log(path: PathLike, manifest: FrameManifest) -> list[DetectionFrame]:
    """Detection log as a full stream: one frame per manifest entry, in order.

    Frames absent from the log come out empty; logs from real detectors omit
    frames with no detections.
    """
    by_index: dict[int, DetectionFrame] = {}
    known = manifest.index_set()
    for line_no, frame in iter_log_frames(path):
        if frame.frame_index not in known:
            raise UnknownFrameError(
                f"line {line_no}: frame index {frame.frame_index} not in manifest"
            )
        if frame.frame_index in by_index:
            raise SchemaError(f"line {line_no}: duplicate frame index {frame.frame_index}")
        by_index[frame.frame_index] = frame

    stream = []
    for entry in manifest.entries:
        logged = by_index.get(entry.frame_index)
        detections = logged.detections if logged is not None else ()
        stream.append(
            DetectionFrame(
                frame_index=entry.frame_index,
                timestamp_ms=entry.timestamp_ms,
                detections=detections,
            )
        )
    return stream


def write_detection_log(frames: Iterable[DetectionFrame], path: PathLike) -> None:
    with atomic_output(path) as handle:
        for frame in frames:
            handle.write(encode_log_line(frame))
            handle.write("\n")


def parse_gps_track(path: PathLike) -> GeoTrack:
    """Parse and invariant-check a GPS track CSV."""
    fixes = []
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty track file") from None
        if [h.strip() for h in header] != ["t_ms", "lat", "lon"]:
            raise SchemaError(f"{path}: expected header 't_ms,lat,lon', got {header}")
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise SchemaError(f"{path}:{row_no}: expected 3 fields, got {len(row)}")
            try:
                fix = GeoFix(int(row[0]), float(row[1]), float(row[2]))
            except (ValueError, SchemaError) as exc:
                raise SchemaError(f"{path}:{row_no}: {exc}") from exc
            fixes.append(fix)
    return GeoTrack(fixes=tuple(fixes))


def write_gps_track(track: GeoTrack, path: PathLike) -> None:
    with atomic_output(path) as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["t_ms", "lat", "lon"])
        for fix in track.fixes:
            writer.writerow([fix.timestamp_ms, repr(fix.lat_deg), repr(fix.lon_deg)])
