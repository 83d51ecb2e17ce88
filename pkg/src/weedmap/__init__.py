"""weedmap: offline weed-detection pipeline with replayable detection backends.

Frame ingestion, pluggable detection (replay logs or an external runner),
confidence filtering, density classification, heatmap overlays, geolocated
density grids, detector evaluation, benchmarking, and bounding-box-aware
dataset augmentation.
"""

from .geometry import (
    BoundingBox,
    Detection,
    DetectionFrame,
    WeedClass,
    filter_by_confidence,
    iou,
    nms,
)

__all__ = [
    "BoundingBox",
    "Detection",
    "DetectionFrame",
    "WeedClass",
    "filter_by_confidence",
    "iou",
    "nms",
]

__version__ = "0.1.0"
