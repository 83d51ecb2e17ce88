"""Heatmap-style detection overlays: colored box commands and raster output.

Hue encodes density class (yellow = low, orange = medium, red = high); the
seedling class reuses yellow. Raster output is binary PPM so golden tests
stay bit-exact without codec dependencies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .geometry import DetectionFrame, WeedClass
from .ioutil import PathLike, atomic_write_bytes

PALETTE: dict[WeedClass, tuple[int, int, int]] = {
    WeedClass.LOW: (255, 255, 0),
    WeedClass.MEDIUM: (255, 165, 0),
    WeedClass.HIGH: (255, 0, 0),
    WeedClass.SEEDLING: (255, 255, 0),
}
FILL_ALPHA = 96


@dataclass(frozen=True)
class OverlayCommand:
    """One colored rectangle. `px` is (x0, y0, x1, y1), half-open, clipped."""

    px: tuple[int, int, int, int]
    rgba: tuple[int, int, int, int]
    label: str


@dataclass(frozen=True)
class OverlayLayer:
    commands: tuple[OverlayCommand, ...]
    size: tuple[int, int]

    def to_json_dict(self) -> dict:
        return {
            "size": list(self.size),
            "cmds": [
                {"px": list(c.px), "rgba": list(c.rgba), "label": c.label}
                for c in self.commands
            ],
        }


def render_overlay(
    frame: DetectionFrame,
    image_size: tuple[int, int],
    palette: dict[WeedClass, tuple[int, int, int]] = PALETTE,
    alpha: int = FILL_ALPHA,
) -> OverlayLayer:
    """One command per detection, in input order.

    Boxes are denormalized with floor for the min corner and ceil for the max
    corner so no covered pixel is lost to rounding, then clipped to the frame.
    """
    width, height = image_size
    if width < 1 or height < 1:
        raise ValueError(f"image size must be positive, got {width}x{height}")
    commands = []
    for det in frame.detections:
        x0 = max(0, min(width, math.floor(det.box.x_min * width)))
        y0 = max(0, min(height, math.floor(det.box.y_min * height)))
        x1 = max(x0, min(width, math.ceil(det.box.x_max * width)))
        y1 = max(y0, min(height, math.ceil(det.box.y_max * height)))
        r, g, b = palette[det.cls]
        commands.append(
            OverlayCommand(
                px=(x0, y0, x1, y1),
                rgba=(r, g, b, alpha),
                label=f"{det.cls.value} {det.confidence:.2f}",
            )
        )
    return OverlayLayer(commands=tuple(commands), size=(width, height))


def _blend_region(region: np.ndarray, rgb: tuple[int, int, int], alpha: int) -> np.ndarray:
    # Source-over per channel with round-half-up: (2*(src*a + dst*(255-a)) + 255) // 510.
    src = np.array(rgb, dtype=np.uint32)
    num = src * alpha + region.astype(np.uint32) * (255 - alpha)
    return ((2 * num + 255) // 510).astype(np.uint8)


def rasterize(base: np.ndarray, layer: OverlayLayer) -> np.ndarray:
    """Alpha-blend the layer's commands onto a copy of the base image.

    Fills use source-over blending in command order; labels are drawn opaque
    in the command color with the built-in 5x7 bitmap font.
    """
    width, height = layer.size
    if base.shape != (height, width, 3):
        raise ValueError(
            f"base image shape {base.shape} does not match layer size {width}x{height}"
        )
    out = base.copy()
    for cmd in layer.commands:
        x0, y0, x1, y1 = cmd.px
        r, g, b, a = cmd.rgba
        if x1 > x0 and y1 > y0 and a > 0:
            out[y0:y1, x0:x1] = _blend_region(out[y0:y1, x0:x1], (r, g, b), a)
        if cmd.label:
            draw_text(out, cmd.label, x0 + 1, y0 + 1, (r, g, b))
    return out


# 5x7 bitmap glyphs for overlay labels: digits, dot, space and the letters the
# class names use. Unknown characters render as a solid block.
_GLYPHS: dict[str, tuple[str, ...]] = {
    "0": (".XXX.", "X...X", "X..XX", "X.X.X", "XX..X", "X...X", ".XXX."),
    "1": ("..X..", ".XX..", "..X..", "..X..", "..X..", "..X..", ".XXX."),
    "2": (".XXX.", "X...X", "....X", "...X.", "..X..", ".X...", "XXXXX"),
    "3": ("XXXX.", "....X", "....X", ".XXX.", "....X", "....X", "XXXX."),
    "4": ("...X.", "..XX.", ".X.X.", "X..X.", "XXXXX", "...X.", "...X."),
    "5": ("XXXXX", "X....", "XXXX.", "....X", "....X", "X...X", ".XXX."),
    "6": (".XXX.", "X....", "X....", "XXXX.", "X...X", "X...X", ".XXX."),
    "7": ("XXXXX", "....X", "...X.", "..X..", "..X..", "..X..", "..X.."),
    "8": (".XXX.", "X...X", "X...X", ".XXX.", "X...X", "X...X", ".XXX."),
    "9": (".XXX.", "X...X", "X...X", ".XXXX", "....X", "....X", ".XXX."),
    ".": (".....", ".....", ".....", ".....", ".....", ".XX..", ".XX.."),
    " ": (".....", ".....", ".....", ".....", ".....", ".....", "....."),
    "d": ("XXXX.", "X...X", "X...X", "X...X", "X...X", "X...X", "XXXX."),
    "e": ("XXXXX", "X....", "X....", "XXXX.", "X....", "X....", "XXXXX"),
    "g": (".XXX.", "X...X", "X....", "X.XXX", "X...X", "X...X", ".XXX."),
    "h": ("X...X", "X...X", "X...X", "XXXXX", "X...X", "X...X", "X...X"),
    "i": (".XXX.", "..X..", "..X..", "..X..", "..X..", "..X..", ".XXX."),
    "l": ("X....", "X....", "X....", "X....", "X....", "X....", "XXXXX"),
    "m": ("X...X", "XX.XX", "X.X.X", "X.X.X", "X...X", "X...X", "X...X"),
    "n": ("X...X", "XX..X", "X.X.X", "X.X.X", "X..XX", "X...X", "X...X"),
    "o": (".XXX.", "X...X", "X...X", "X...X", "X...X", "X...X", ".XXX."),
    "s": (".XXXX", "X....", "X....", ".XXX.", "....X", "....X", "XXXX."),
    "u": ("X...X", "X...X", "X...X", "X...X", "X...X", "X...X", ".XXX."),
    "w": ("X...X", "X...X", "X...X", "X.X.X", "X.X.X", "XX.XX", "X...X"),
}
_UNKNOWN_GLYPH = ("XXXXX",) * 7
GLYPH_WIDTH = 5
GLYPH_HEIGHT = 7
GLYPH_ADVANCE = GLYPH_WIDTH + 1


def draw_text(img: np.ndarray, text: str, x: int, y: int, rgb: tuple[int, int, int]) -> None:
    """Draw text at (x, y) in-place, clipped to the image."""
    height, width = img.shape[:2]
    color = np.array(rgb, dtype=np.uint8)
    for index, char in enumerate(text):
        glyph = _GLYPHS.get(char, _UNKNOWN_GLYPH)
        gx = x + index * GLYPH_ADVANCE
        for row, bits in enumerate(glyph):
            py = y + row
            if py < 0 or py >= height:
                continue
            for col, bit in enumerate(bits):
                px = gx + col
                if bit == "X" and 0 <= px < width:
                    img[py, px] = color


def write_ppm(img: np.ndarray, path: PathLike) -> None:
    """Write an HxWx3 uint8 image as binary PPM (P6, maxval 255), atomically."""
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ValueError(f"expected HxWx3 uint8 image, got {img.shape} {img.dtype}")
    height, width = img.shape[:2]
    header = f"P6\n{width} {height}\n255\n".encode("ascii")
    atomic_write_bytes(path, header + img.tobytes())


def read_ppm(path: PathLike) -> np.ndarray:
    with open(path, "rb") as handle:
        data = handle.read()
    parts = data.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P6" or parts[2] != b"255":
        raise ValueError(f"{path}: not a P6 maxval-255 PPM")
    width, height = (int(token) for token in parts[1].split())
    pixels = np.frombuffer(parts[3], dtype=np.uint8, count=width * height * 3)
    return pixels.reshape(height, width, 3).copy()


def blank_canvas(size: tuple[int, int], value: int = 0) -> np.ndarray:
    width, height = size
    return np.full((height, width, 3), value, dtype=np.uint8)
