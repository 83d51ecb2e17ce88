"""Offline geolocated density grids: local projection, accumulation, export.

Works entirely without network access: frames are geolocated by interpolating
a recorded GPS track and counts land in a sparse ground-plane grid that
exports to GeoJSON (RFC 7946, WGS84 lon-lat order) and CSV.
"""

from __future__ import annotations

import bisect
import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional

from .density import dominant_class
from .geometry import DetectionFrame, WeedClass
from .ingest import GeoFix, GeoTrack
from .ioutil import PathLike, atomic_write_text

EARTH_RADIUS_M = 6_371_000.0


class TrackSpanError(ValueError):
    """Requested time lies outside the GPS track's span."""


def interpolate_fix(track: GeoTrack, t_ms: int) -> GeoFix:
    """Piecewise-linear position at t_ms; exact at the recorded fixes."""
    times = [fix.timestamp_ms for fix in track.fixes]
    if not times[0] <= t_ms <= times[-1]:
        raise TrackSpanError(
            f"t={t_ms} ms outside track span [{times[0]}, {times[-1]}]"
        )
    pos = bisect.bisect_left(times, t_ms)
    if times[pos] == t_ms:
        fix = track.fixes[pos]
        return GeoFix(t_ms, fix.lat_deg, fix.lon_deg)
    lo, hi = track.fixes[pos - 1], track.fixes[pos]
    u = (t_ms - lo.timestamp_ms) / (hi.timestamp_ms - lo.timestamp_ms)
    return GeoFix(
        timestamp_ms=t_ms,
        lat_deg=lo.lat_deg + (hi.lat_deg - lo.lat_deg) * u,
        lon_deg=lo.lon_deg + (hi.lon_deg - lo.lon_deg) * u,
    )


@dataclass(frozen=True)
class LocalProjection:
    """Equirectangular projection around a field-local origin.

    Adequate for extents of a few kilometres; the x scale is fixed at the
    origin latitude.
    """

    origin_lat_deg: float
    origin_lon_deg: float
    earth_radius_m: float = EARTH_RADIUS_M

    def __post_init__(self) -> None:
        if not -90.0 <= self.origin_lat_deg <= 90.0:
            raise ValueError(f"origin latitude out of range: {self.origin_lat_deg}")
        if not -180.0 <= self.origin_lon_deg <= 180.0:
            raise ValueError(f"origin longitude out of range: {self.origin_lon_deg}")

    def _lon_scale(self) -> float:
        return math.cos(math.radians(self.origin_lat_deg))

    def project(self, lat_deg: float, lon_deg: float) -> tuple[float, float]:
        """Degrees to local meters (x east, y north)."""
        x = self.earth_radius_m * math.radians(lon_deg - self.origin_lon_deg) * self._lon_scale()
        y = self.earth_radius_m * math.radians(lat_deg - self.origin_lat_deg)
        return (x, y)

    def project_fix(self, fix: GeoFix) -> tuple[float, float]:
        return self.project(fix.lat_deg, fix.lon_deg)

    def inverse(self, x_m: float, y_m: float) -> tuple[float, float]:
        """Local meters back to (lat_deg, lon_deg)."""
        lat = self.origin_lat_deg + math.degrees(y_m / self.earth_radius_m)
        lon = self.origin_lon_deg + math.degrees(x_m / (self.earth_radius_m * self._lon_scale()))
        return (lat, lon)


class DensityGrid:
    """Sparse per-class detection counts over square ground cells.

    Single-writer accumulator: exactly one thread may mutate it; exports read
    a consistent snapshot of the cell map.
    """

    def __init__(self, projection: LocalProjection, cell_size_m: float = 1.0) -> None:
        if cell_size_m <= 0:
            raise ValueError(f"cell size must be positive, got {cell_size_m}")
        self.projection = projection
        self.cell_size_m = cell_size_m
        self._cells: dict[tuple[int, int], dict[WeedClass, int]] = {}

    def cell_index(self, fix: GeoFix) -> tuple[int, int]:
        x, y = self.projection.project_fix(fix)
        return (math.floor(x / self.cell_size_m), math.floor(y / self.cell_size_m))

    def accumulate(self, fix: GeoFix, frame: DetectionFrame) -> "DensityGrid":
        """Attribute every detection of the frame to the fix's cell."""
        if not frame.detections:
            return self
        key = self.cell_index(fix)
        counts = self._cells.get(key)
        if counts is None:
            counts = {cls: 0 for cls in WeedClass}
            self._cells[key] = counts
        for det in frame.detections:
            counts[det.cls] += 1
        return self

    def counts_at(self, ix: int, iy: int) -> dict[WeedClass, int]:
        return dict(self._cells.get((ix, iy), {cls: 0 for cls in WeedClass}))

    def total_count(self) -> int:
        return sum(sum(counts.values()) for counts in self._cells.values())

    def __len__(self) -> int:
        return len(self._cells)

    def iter_cells(self) -> Iterator[tuple[tuple[int, int], dict[WeedClass, int]]]:
        for key in sorted(self._cells):
            yield key, self._cells[key]


def _cell_properties(counts: dict[WeedClass, int]) -> dict:
    dominant = dominant_class(counts)
    return {
        "low": counts[WeedClass.LOW],
        "medium": counts[WeedClass.MEDIUM],
        "high": counts[WeedClass.HIGH],
        "seedling": counts[WeedClass.SEEDLING],
        "total": sum(counts.values()),
        "dominant": dominant.value if dominant is not None else None,
    }


def export_geojson(grid: DensityGrid) -> dict:
    """FeatureCollection with one polygon per non-empty cell (lon-lat order)."""
    features = []
    c = grid.cell_size_m
    for (ix, iy), counts in grid.iter_cells():
        x0, y0 = ix * c, iy * c
        x1, y1 = (ix + 1) * c, (iy + 1) * c
        # Counterclockwise exterior ring, closed.
        ring = [
            grid.projection.inverse(x, y)
            for x, y in ((x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0))
        ]
        features.append(
            {
                "type": "Feature",
                "geometry": {
                    "type": "Polygon",
                    "coordinates": [[[lon, lat] for lat, lon in ring]],
                },
                "properties": {"ix": ix, "iy": iy, **_cell_properties(counts)},
            }
        )
    return {"type": "FeatureCollection", "features": features}


def export_csv(grid: DensityGrid) -> str:
    """CSV mirror of the grid; lat/lon is each cell's center."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["ix", "iy", "lat", "lon", "low", "medium", "high", "seedling", "total"])
    c = grid.cell_size_m
    for (ix, iy), counts in grid.iter_cells():
        lat, lon = grid.projection.inverse((ix + 0.5) * c, (iy + 0.5) * c)
        props = _cell_properties(counts)
        writer.writerow(
            [
                ix,
                iy,
                repr(lat),
                repr(lon),
                props["low"],
                props["medium"],
                props["high"],
                props["seedling"],
                props["total"],
            ]
        )
    return buffer.getvalue()


def write_geojson(grid: DensityGrid, path: PathLike) -> None:
    atomic_write_text(path, json.dumps(export_geojson(grid), separators=(",", ":")) + "\n")


def write_csv(grid: DensityGrid, path: PathLike) -> None:
    atomic_write_text(path, export_csv(grid))
