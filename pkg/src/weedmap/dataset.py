"""Dataset disk layout: PNG images, a manifest JSON and annotation JSONL.

Layout::

    dataset.json        {"images":[{"id","path","split"?},...],"annotations":"annotations.jsonl"}
    annotations.jsonl   one interchange log line per image, "i" = position in the manifest,
                        confidence omitted
    images/*.png

Paths inside the manifest are relative to the manifest's directory.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .augment import AnnotatedImage, DatasetItem, LabeledBox
from .geometry import Detection, DetectionFrame
from .ingest import SchemaError, iter_log_frames, encode_log_line
from .ioutil import PathLike, atomic_output, atomic_write_bytes


def load_image(path: PathLike) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def save_image(pixels: np.ndarray, path: PathLike) -> None:
    import io

    buffer = io.BytesIO()
    Image.fromarray(pixels, mode="RGB").save(buffer, format="PNG")
    atomic_write_bytes(path, buffer.getvalue())


def load_dataset(manifest_path: PathLike) -> list[DatasetItem]:
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    with open(manifest_path, "r", encoding="utf-8") as handle:
        try:
            doc = json.load(handle)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{manifest_path}: not valid JSON: {exc}") from exc
    try:
        entries = [(str(e["id"]), str(e["path"]), e.get("split")) for e in doc["images"]]
        annotations_rel = doc.get("annotations")
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"{manifest_path}: malformed dataset manifest: {exc}") from exc

    boxes_by_index: dict[int, tuple[LabeledBox, ...]] = {}
    if annotations_rel is not None:
        for _line_no, frame in iter_log_frames(root / annotations_rel):
            boxes_by_index[frame.frame_index] = tuple(
                LabeledBox(det.box, det.cls) for det in frame.detections
            )

    items = []
    for index, (image_id, rel_path, split) in enumerate(entries):
        pixels = load_image(root / rel_path)
        image = AnnotatedImage(pixels=pixels, boxes=boxes_by_index.get(index, ()), id=image_id)
        items.append(DatasetItem(image=image, split=split))
    return items


def save_dataset(items: Sequence[DatasetItem], out_dir: PathLike) -> Path:
    """Write images, annotations and manifest under out_dir; returns manifest path."""
    out_dir = Path(out_dir)
    images_dir = out_dir / "images"
    images_dir.mkdir(parents=True, exist_ok=True)

    manifest_entries = []
    for item in items:
        rel = f"images/{item.image.id}.png"
        save_image(item.image.pixels, out_dir / rel)
        manifest_entries.append({"id": item.image.id, "path": rel, "split": item.split})

    with atomic_output(out_dir / "annotations.jsonl") as handle:
        for index, item in enumerate(items):
            detections = tuple(
                Detection(box=lb.box, cls=lb.cls, confidence=1.0) for lb in item.image.boxes
            )
            frame = DetectionFrame(frame_index=index, timestamp_ms=0, detections=detections)
            handle.write(encode_log_line(frame, include_conf=False))
            handle.write("\n")

    manifest_path = out_dir / "dataset.json"
    with atomic_output(manifest_path) as handle:
        json.dump(
            {"images": manifest_entries, "annotations": "annotations.jsonl"},
            handle,
            separators=(",", ":"),
        )
        handle.write("\n")
    return manifest_path
