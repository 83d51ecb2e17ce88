"""Deterministic, box-aware dataset augmentation and train/val/test splitting.

Every transform is a pure function of its parameters; dataset generation
draws parameters from a counter-based RNG keyed by (seed, image id, variant
index), so outputs are identical regardless of processing order.

Annotation coordinates live on a dyadic lattice (multiples of 2^-20, well
below annotation precision). On that lattice reflections like 1-x are exact
IEEE operations, which makes flips and 90-degree rotations true involutions
on boxes, not merely approximate ones.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .geometry import BoundingBox, WeedClass, intersect, union_area

COORD_SNAP = 1 << 20

# Hard parameter bounds; specs and dispatchers may narrow but never widen them.
MAX_CROP_ZOOM = 0.20
MAX_ROTATION_DEG = 15.0
MAX_SHEAR_DEG = 15.0
MAX_HUE_DEG = 25.0
MAX_SATURATION = 0.30
MAX_BRIGHTNESS = 0.25
MAX_EXPOSURE = 0.14
MAX_BLUR_PX = 2.5
MAX_NOISE_FRAC = 0.0199
CUTOUT_COUNT = 3
CUTOUT_SIZE_FRAC = 0.10
BOX_KEEP_FRAC = 0.10


def snap_unit(v: float) -> float:
    return round(v * COORD_SNAP) / COORD_SNAP


def snap_box(box: BoundingBox) -> BoundingBox:
    return BoundingBox(
        snap_unit(box.x_min), snap_unit(box.y_min), snap_unit(box.x_max), snap_unit(box.y_max)
    )


@dataclass(frozen=True)
class LabeledBox:
    box: BoundingBox
    cls: WeedClass


@dataclass(frozen=True, eq=False)
class AnnotatedImage:
    """An RGB raster with class-labeled boxes in normalized coordinates."""

    pixels: np.ndarray
    boxes: tuple[LabeledBox, ...]
    id: str

    def __post_init__(self) -> None:
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3 or self.pixels.dtype != np.uint8:
            raise ValueError(f"pixels must be HxWx3 uint8, got {self.pixels.shape} {self.pixels.dtype}")
        snapped = tuple(LabeledBox(snap_box(lb.box), lb.cls) for lb in self.boxes)
        object.__setattr__(self, "boxes", snapped)

    @property
    def size(self) -> tuple[int, int]:
        return (self.pixels.shape[1], self.pixels.shape[0])


@dataclass(frozen=True)
class AugmentationSpec:
    """Parameter ranges for dataset expansion; bounds are hard limits."""

    flip_horizontal: bool = True
    flip_vertical: bool = True
    rot90_cw: bool = True
    rot90_ccw: bool = True
    rot90_180: bool = True
    max_crop_zoom: float = MAX_CROP_ZOOM
    max_rotation_deg: float = MAX_ROTATION_DEG
    max_shear_h_deg: float = MAX_SHEAR_DEG
    max_shear_v_deg: float = MAX_SHEAR_DEG
    max_hue_deg: float = MAX_HUE_DEG
    max_saturation: float = MAX_SATURATION
    max_brightness: float = MAX_BRIGHTNESS
    max_exposure: float = MAX_EXPOSURE
    max_blur_px: float = MAX_BLUR_PX
    max_noise_frac: float = MAX_NOISE_FRAC
    cutout_count: int = CUTOUT_COUNT
    cutout_size_frac: float = CUTOUT_SIZE_FRAC
    cutout: bool = True
    mosaic: bool = True
    outputs_per_image: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        limits = [
            ("max_crop_zoom", self.max_crop_zoom, MAX_CROP_ZOOM),
            ("max_rotation_deg", self.max_rotation_deg, MAX_ROTATION_DEG),
            ("max_shear_h_deg", self.max_shear_h_deg, MAX_SHEAR_DEG),
            ("max_shear_v_deg", self.max_shear_v_deg, MAX_SHEAR_DEG),
            ("max_hue_deg", self.max_hue_deg, MAX_HUE_DEG),
            ("max_saturation", self.max_saturation, MAX_SATURATION),
            ("max_brightness", self.max_brightness, MAX_BRIGHTNESS),
            ("max_exposure", self.max_exposure, MAX_EXPOSURE),
            ("max_blur_px", self.max_blur_px, MAX_BLUR_PX),
            ("max_noise_frac", self.max_noise_frac, MAX_NOISE_FRAC),
        ]
        for name, value, bound in limits:
            if not 0.0 <= value <= bound:
                raise ValueError(f"{name}={value} outside [0, {bound}]")
        if self.cutout_count < 0 or not 0.0 <= self.cutout_size_frac <= 1.0:
            raise ValueError("invalid cutout settings")
        if self.outputs_per_image < 1:
            raise ValueError(f"outputs_per_image must be >= 1, got {self.outputs_per_image}")


# ---------------------------------------------------------------------------
# split


@dataclass(frozen=True)
class SplitPlan:
    fractions: tuple[float, float, float]
    seed: int
    assignment: Mapping[str, str]

    def counts(self) -> dict[str, int]:
        counts = {"train": 0, "val": 0, "test": 0}
        for split in self.assignment.values():
            counts[split] += 1
        return counts

    def ids_for(self, split: str) -> list[str]:
        return [i for i, s in self.assignment.items() if s == split]

    def to_json_dict(self) -> dict:
        return {
            "fractions": list(self.fractions),
            "seed": self.seed,
            "counts": self.counts(),
            "assignment": dict(self.assignment),
        }


def split_dataset(
    ids: Sequence[str],
    fractions: tuple[float, float, float] = (0.70, 0.20, 0.10),
    seed: int = 0,
) -> SplitPlan:
    """Seeded shuffle, then floor-sized val and test blocks; train takes the rest.

    For any n, val gets floor(n*f_val) and test floor(n*f_test), so rounding
    remainders always land in train.
    """
    f_train, f_val, f_test = fractions
    if min(fractions) < 0 or abs(f_train + f_val + f_test - 1.0) > 1e-9:
        raise ValueError(f"fractions must be non-negative and sum to 1, got {fractions}")
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate ids in dataset")
    order = list(ids)
    random.Random(seed).shuffle(order)
    n = len(order)
    val_n = math.floor(n * f_val)
    test_n = math.floor(n * f_test)
    train_n = n - val_n - test_n
    assignment: dict[str, str] = {}
    for pos, image_id in enumerate(order):
        if pos < train_n:
            assignment[image_id] = "train"
        elif pos < train_n + val_n:
            assignment[image_id] = "val"
        else:
            assignment[image_id] = "test"
    return SplitPlan(fractions=fractions, seed=seed, assignment=assignment)


# ---------------------------------------------------------------------------
# affine machinery


@dataclass(frozen=True)
class Affine2D:
    """(x, y) -> (a*x + b*y + c, d*x + e*y + f) in continuous pixel coordinates."""

    a: float
    b: float
    c: float
    d: float
    e: float
    f: float

    def apply(self, x: float, y: float) -> tuple[float, float]:
        return (self.a * x + self.b * y + self.c, self.d * x + self.e * y + self.f)

    def inverse(self) -> "Affine2D":
        det = self.a * self.e - self.b * self.d
        if det == 0:
            raise ValueError("affine transform is singular")
        ia, ib = self.e / det, -self.b / det
        id_, ie = -self.d / det, self.a / det
        return Affine2D(ia, ib, -(ia * self.c + ib * self.f), id_, ie, -(id_ * self.c + ie * self.f))


def _round_u8(arr: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(arr, 0.0, 255.0) + 0.5).astype(np.uint8)


def warp_affine(img: np.ndarray, inverse: Affine2D, out_size: tuple[int, int]) -> np.ndarray:
    """Bilinear warp; `inverse` maps output pixel coords to source coords.

    Coordinates are continuous with pixel k spanning [k, k+1); outside the
    source the fill is black.
    """
    out_w, out_h = out_size
    src_h, src_w = img.shape[:2]
    jj, ii = np.meshgrid(
        np.arange(out_w, dtype=np.float64) + 0.5,
        np.arange(out_h, dtype=np.float64) + 0.5,
    )
    xs = inverse.a * jj + inverse.b * ii + inverse.c - 0.5
    ys = inverse.d * jj + inverse.e * ii + inverse.f - 0.5
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = (xs - x0)[..., None]
    fy = (ys - y0)[..., None]

    def tap(yi: np.ndarray, xi: np.ndarray) -> np.ndarray:
        inside = (xi >= 0) & (xi < src_w) & (yi >= 0) & (yi < src_h)
        pix = img[np.clip(yi, 0, src_h - 1), np.clip(xi, 0, src_w - 1)].astype(np.float64)
        pix[~inside] = 0.0
        return pix

    acc = (
        tap(y0, x0) * (1 - fx) * (1 - fy)
        + tap(y0, x0 + 1) * fx * (1 - fy)
        + tap(y0 + 1, x0) * (1 - fx) * fy
        + tap(y0 + 1, x0 + 1) * fx * fy
    )
    return _round_u8(acc)


def _map_boxes(
    boxes: Sequence[LabeledBox],
    forward: Affine2D,
    in_size: tuple[int, int],
    out_size: tuple[int, int],
    keep_frac: float = BOX_KEEP_FRAC,
) -> tuple[LabeledBox, ...]:
    """Corner-transform each box, take the axis-aligned envelope, clip, drop.

    A box is dropped when clipping leaves less than `keep_frac` of its
    envelope area inside the frame.
    """
    in_w, in_h = in_size
    out_w, out_h = out_size
    kept = []
    for lb in boxes:
        b = lb.box
        corners = [
            forward.apply(b.x_min * in_w, b.y_min * in_h),
            forward.apply(b.x_max * in_w, b.y_min * in_h),
            forward.apply(b.x_min * in_w, b.y_max * in_h),
            forward.apply(b.x_max * in_w, b.y_max * in_h),
        ]
        xs = [p[0] / out_w for p in corners]
        ys = [p[1] / out_h for p in corners]
        x0, x1, y0, y1 = min(xs), max(xs), min(ys), max(ys)
        env_area = (x1 - x0) * (y1 - y0)
        cx0, cy0 = max(0.0, x0), max(0.0, y0)
        cx1, cy1 = min(1.0, x1), min(1.0, y1)
        if cx0 >= cx1 or cy0 >= cy1:
            continue
        if env_area > 0 and (cx1 - cx0) * (cy1 - cy0) < keep_frac * env_area:
            continue
        kept.append(LabeledBox(snap_box(BoundingBox(cx0, cy0, cx1, cy1)), lb.cls))
    return tuple(kept)


# ---------------------------------------------------------------------------
# geometric transforms


def flip(img: AnnotatedImage, direction: str) -> AnnotatedImage:
    """Exact mirror; involutive on pixels and boxes."""
    if direction == "horizontal":
        pixels = np.ascontiguousarray(img.pixels[:, ::-1])
        boxes = tuple(
            LabeledBox(BoundingBox(1.0 - b.box.x_max, b.box.y_min, 1.0 - b.box.x_min, b.box.y_max), b.cls)
            for b in img.boxes
        )
    elif direction == "vertical":
        pixels = np.ascontiguousarray(img.pixels[::-1])
        boxes = tuple(
            LabeledBox(BoundingBox(b.box.x_min, 1.0 - b.box.y_max, b.box.x_max, 1.0 - b.box.y_min), b.cls)
            for b in img.boxes
        )
    else:
        raise ValueError(f"unknown flip direction: {direction!r}")
    return AnnotatedImage(pixels=pixels, boxes=boxes, id=img.id)


def rot90(img: AnnotatedImage, mode: str) -> AnnotatedImage:
    """Exact quarter/half-turn; four cw (or ccw) applications are the identity."""
    if mode == "cw":
        pixels = np.ascontiguousarray(np.rot90(img.pixels, k=-1))
        boxes = tuple(
            LabeledBox(BoundingBox(1.0 - b.box.y_max, b.box.x_min, 1.0 - b.box.y_min, b.box.x_max), b.cls)
            for b in img.boxes
        )
    elif mode == "ccw":
        pixels = np.ascontiguousarray(np.rot90(img.pixels, k=1))
        boxes = tuple(
            LabeledBox(BoundingBox(b.box.y_min, 1.0 - b.box.x_max, b.box.y_max, 1.0 - b.box.x_min), b.cls)
            for b in img.boxes
        )
    elif mode == "180":
        pixels = np.ascontiguousarray(np.rot90(img.pixels, k=2))
        boxes = tuple(
            LabeledBox(
                BoundingBox(1.0 - b.box.x_max, 1.0 - b.box.y_max, 1.0 - b.box.x_min, 1.0 - b.box.y_min),
                b.cls,
            )
            for b in img.boxes
        )
    else:
        raise ValueError(f"unknown rot90 mode: {mode!r}")
    return AnnotatedImage(pixels=pixels, boxes=boxes, id=img.id)


def crop_zoom(img: AnnotatedImage, zoom: float, anchor_x: float = 0.5, anchor_y: float = 0.5) -> AnnotatedImage:
    """Crop a (1-zoom)-sized window and scale it back up to the full frame.

    The window's top-left offset is anchor * zoom of the frame, so any anchor
    in [0,1] keeps the window inside the image.
    """
    if not 0.0 <= zoom <= MAX_CROP_ZOOM:
        raise ValueError(f"zoom {zoom} outside [0, {MAX_CROP_ZOOM}]")
    if not (0.0 <= anchor_x <= 1.0 and 0.0 <= anchor_y <= 1.0):
        raise ValueError("crop anchor outside [0, 1]")
    if zoom == 0.0:
        return img
    w, h = img.size
    scale = 1.0 - zoom
    ox = anchor_x * zoom * w
    oy = anchor_y * zoom * h
    forward = Affine2D(1.0 / scale, 0.0, -ox / scale, 0.0, 1.0 / scale, -oy / scale)
    pixels = warp_affine(img.pixels, forward.inverse(), (w, h))
    return AnnotatedImage(pixels=pixels, boxes=_map_boxes(img.boxes, forward, (w, h), (w, h)), id=img.id)


def rotate(img: AnnotatedImage, angle_deg: float) -> AnnotatedImage:
    """Rotate about the image center; black fill, envelope-mapped boxes."""
    if not -MAX_ROTATION_DEG <= angle_deg <= MAX_ROTATION_DEG:
        raise ValueError(f"angle {angle_deg} outside +/-{MAX_ROTATION_DEG}")
    w, h = img.size
    theta = math.radians(angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    cx, cy = w / 2.0, h / 2.0
    forward = Affine2D(
        cos_t, -sin_t, cx - cos_t * cx + sin_t * cy,
        sin_t, cos_t, cy - sin_t * cx - cos_t * cy,
    )
    pixels = warp_affine(img.pixels, forward.inverse(), (w, h))
    return AnnotatedImage(pixels=pixels, boxes=_map_boxes(img.boxes, forward, (w, h), (w, h)), id=img.id)


def shear(img: AnnotatedImage, h_deg: float = 0.0, v_deg: float = 0.0) -> AnnotatedImage:
    """Shear about the image center, horizontal and/or vertical."""
    if not -MAX_SHEAR_DEG <= h_deg <= MAX_SHEAR_DEG or not -MAX_SHEAR_DEG <= v_deg <= MAX_SHEAR_DEG:
        raise ValueError(f"shear ({h_deg}, {v_deg}) outside +/-{MAX_SHEAR_DEG}")
    w, h = img.size
    th = math.tan(math.radians(h_deg))
    tv = math.tan(math.radians(v_deg))
    cx, cy = w / 2.0, h / 2.0
    forward = Affine2D(1.0, th, -th * cy, tv, 1.0, -tv * cx)
    pixels = warp_affine(img.pixels, forward.inverse(), (w, h))
    return AnnotatedImage(pixels=pixels, boxes=_map_boxes(img.boxes, forward, (w, h), (w, h)), id=img.id)


def geometric_transform(img: AnnotatedImage, op: str, params: dict) -> AnnotatedImage:
    if op == "flip":
        return flip(img, params["direction"])
    if op == "rot90":
        return rot90(img, params["mode"])
    if op == "crop":
        return crop_zoom(img, params["zoom"], params.get("anchor_x", 0.5), params.get("anchor_y", 0.5))
    if op == "rotate":
        return rotate(img, params["angle_deg"])
    if op == "shear":
        return shear(img, params.get("h_deg", 0.0), params.get("v_deg", 0.0))
    raise ValueError(f"unknown geometric op: {op!r}")


# ---------------------------------------------------------------------------
# photometric transforms (never touch boxes)


def _rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = np.max(rgb, axis=-1)
    minc = np.min(rgb, axis=-1)
    delta = maxc - minc
    safe_max = np.where(maxc == 0.0, 1.0, maxc)
    safe_delta = np.where(delta == 0.0, 1.0, delta)
    s = np.where(maxc == 0.0, 0.0, delta / safe_max)
    rc = (maxc - r) / safe_delta
    gc = (maxc - g) / safe_delta
    bc = (maxc - b) / safe_delta
    h = np.where(maxc == r, bc - gc, np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(delta == 0.0, 0.0, (h / 6.0) % 1.0)
    return np.stack([h, s, maxc], axis=-1)


def _hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0).astype(np.int64) % 6
    f = h * 6.0 - np.floor(h * 6.0)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def hue_shift(img: AnnotatedImage, shift_deg: float) -> AnnotatedImage:
    """Rotate hue in HSV space with wraparound."""
    if not -MAX_HUE_DEG <= shift_deg <= MAX_HUE_DEG:
        raise ValueError(f"hue shift {shift_deg} outside +/-{MAX_HUE_DEG}")
    hsv = _rgb_to_hsv(img.pixels.astype(np.float64) / 255.0)
    hsv[..., 0] = (hsv[..., 0] + shift_deg / 360.0) % 1.0
    return replace(img, pixels=_round_u8(_hsv_to_rgb(hsv) * 255.0))


def adjust_saturation(img: AnnotatedImage, delta: float) -> AnnotatedImage:
    if not -MAX_SATURATION <= delta <= MAX_SATURATION:
        raise ValueError(f"saturation delta {delta} outside +/-{MAX_SATURATION}")
    hsv = _rgb_to_hsv(img.pixels.astype(np.float64) / 255.0)
    hsv[..., 1] = np.clip(hsv[..., 1] * (1.0 + delta), 0.0, 1.0)
    return replace(img, pixels=_round_u8(_hsv_to_rgb(hsv) * 255.0))


def adjust_brightness(img: AnnotatedImage, delta: float) -> AnnotatedImage:
    if not -MAX_BRIGHTNESS <= delta <= MAX_BRIGHTNESS:
        raise ValueError(f"brightness delta {delta} outside +/-{MAX_BRIGHTNESS}")
    return replace(img, pixels=_round_u8(img.pixels.astype(np.float64) * (1.0 + delta)))


def adjust_exposure(img: AnnotatedImage, delta: float) -> AnnotatedImage:
    """Gain of 2^delta applied on gamma-linearized channels."""
    if not -MAX_EXPOSURE <= delta <= MAX_EXPOSURE:
        raise ValueError(f"exposure delta {delta} outside +/-{MAX_EXPOSURE}")
    linear = np.power(img.pixels.astype(np.float64) / 255.0, 2.2)
    out = np.power(np.clip(linear * (2.0 ** delta), 0.0, 1.0), 1.0 / 2.2)
    return replace(img, pixels=_round_u8(out * 255.0))


def _blur_axis(arr: np.ndarray, radius: float, axis: int) -> np.ndarray:
    m = int(math.floor(radius))
    frac = radius - m
    weights = [frac] + [1.0] * (2 * m + 1) + [frac] if frac > 0 else [1.0] * (2 * m + 1)
    reach = m + (1 if frac > 0 else 0)
    moved = np.moveaxis(arr, axis, 0)
    padded = np.pad(moved, [(reach, reach)] + [(0, 0)] * (moved.ndim - 1), mode="edge")
    n = moved.shape[0]
    acc = np.zeros_like(moved, dtype=np.float64)
    for k, weight in enumerate(weights):
        acc += weight * padded[k : k + n]
    acc /= 2.0 * radius + 1.0
    return np.moveaxis(acc, 0, axis)


def box_blur(img: AnnotatedImage, radius_px: float) -> AnnotatedImage:
    """Separable box blur with fractional end-tap weights; edges replicate."""
    if not 0.0 <= radius_px <= MAX_BLUR_PX:
        raise ValueError(f"blur radius {radius_px} outside [0, {MAX_BLUR_PX}]")
    if radius_px == 0.0:
        return img
    arr = img.pixels.astype(np.float64)
    arr = _blur_axis(arr, radius_px, 0)
    arr = _blur_axis(arr, radius_px, 1)
    return replace(img, pixels=_round_u8(arr))


def salt_pepper_noise(img: AnnotatedImage, fraction: float, seed: int) -> AnnotatedImage:
    """Set a seeded-random pixel fraction to pure black or white."""
    if not 0.0 <= fraction <= MAX_NOISE_FRAC:
        raise ValueError(f"noise fraction {fraction} outside [0, {MAX_NOISE_FRAC}]")
    w, h = img.size
    count = int(round(fraction * w * h))
    if count == 0:
        return img
    rng = np.random.default_rng(seed)
    flat_idx = rng.choice(w * h, size=count, replace=False)
    values = rng.integers(0, 2, size=count, dtype=np.uint8) * 255
    pixels = img.pixels.copy()
    pixels.reshape(-1, 3)[flat_idx] = values[:, None]
    return replace(img, pixels=pixels)


def photometric_transform(img: AnnotatedImage, op: str, params: dict) -> AnnotatedImage:
    if op == "hue":
        return hue_shift(img, params["shift_deg"])
    if op == "saturation":
        return adjust_saturation(img, params["delta"])
    if op == "brightness":
        return adjust_brightness(img, params["delta"])
    if op == "exposure":
        return adjust_exposure(img, params["delta"])
    if op == "blur":
        return box_blur(img, params["radius_px"])
    if op == "noise":
        return salt_pepper_noise(img, params["fraction"], params.get("seed", 0))
    raise ValueError(f"unknown photometric op: {op!r}")


# ---------------------------------------------------------------------------
# occlusion transforms


def cutout(
    img: AnnotatedImage,
    seed: int,
    count: int = CUTOUT_COUNT,
    size_frac: float = CUTOUT_SIZE_FRAC,
) -> AnnotatedImage:
    """Black out `count` squares; a box goes when occlusion leaves it <10% visible."""
    w, h = img.size
    side = max(1, int(round(size_frac * min(w, h))))
    rng = np.random.default_rng(seed)
    pixels = img.pixels.copy()
    squares = []
    for _ in range(count):
        x = int(rng.integers(0, max(1, w - side + 1)))
        y = int(rng.integers(0, max(1, h - side + 1)))
        pixels[y : y + side, x : x + side] = 0
        squares.append(BoundingBox(x / w, y / h, min(1.0, (x + side) / w), min(1.0, (y + side) / h)))
    kept = []
    for lb in img.boxes:
        occluded = union_area([ib for sq in squares if (ib := intersect(lb.box, sq)) is not None])
        visible = lb.box.area - occluded
        if lb.box.area > 0 and visible < BOX_KEEP_FRAC * lb.box.area:
            continue
        kept.append(lb)
    return AnnotatedImage(pixels=pixels, boxes=tuple(kept), id=img.id)


def mosaic(
    imgs: Sequence[AnnotatedImage],
    center: tuple[float, float],
    out_id: Optional[str] = None,
) -> AnnotatedImage:
    """Tile 4 images into one canvas split at `center` (normalized, in [0.3, 0.7]^2).

    Sources scale bilinearly into the quadrants in order top-left, top-right,
    bottom-left, bottom-right; boxes follow each source's quadrant affine.
    """
    if len(imgs) != 4:
        raise ValueError(f"mosaic needs exactly 4 images, got {len(imgs)}")
    cx, cy = center
    if not (0.3 <= cx <= 0.7 and 0.3 <= cy <= 0.7):
        raise ValueError(f"mosaic center {center} outside [0.3, 0.7]^2")
    w, h = imgs[0].size
    px = min(max(int(round(cx * w)), 1), w - 1)
    py = min(max(int(round(cy * h)), 1), h - 1)
    quadrants = [(0, 0, px, py), (px, 0, w, py), (0, py, px, h), (px, py, w, h)]
    canvas = np.zeros((h, w, 3), dtype=np.uint8)
    boxes: list[LabeledBox] = []
    for src, (qx0, qy0, qx1, qy1) in zip(imgs, quadrants):
        qw, qh = qx1 - qx0, qy1 - qy0
        sw, sh = src.size
        inverse = Affine2D(sw / qw, 0.0, 0.0, 0.0, sh / qh, 0.0)
        canvas[qy0:qy1, qx0:qx1] = warp_affine(src.pixels, inverse, (qw, qh))
        # Normalized source coords -> normalized quadrant coords on the canvas.
        fx0, fy0 = qx0 / w, qy0 / h
        sx, sy = qw / w, qh / h
        for lb in src.boxes:
            b = lb.box
            boxes.append(
                LabeledBox(
                    snap_box(
                        BoundingBox(
                            fx0 + b.x_min * sx, fy0 + b.y_min * sy,
                            fx0 + b.x_max * sx, fy0 + b.y_max * sy,
                        )
                    ),
                    lb.cls,
                )
            )
    return AnnotatedImage(pixels=canvas, boxes=tuple(boxes), id=out_id or imgs[0].id)


def occlusion_transform(imgs: Sequence[AnnotatedImage], op: str, params: dict) -> AnnotatedImage:
    if op == "cutout":
        if len(imgs) != 1:
            raise ValueError(f"cutout takes exactly 1 image, got {len(imgs)}")
        return cutout(
            imgs[0],
            seed=params.get("seed", 0),
            count=params.get("count", CUTOUT_COUNT),
            size_frac=params.get("size_frac", CUTOUT_SIZE_FRAC),
        )
    if op == "mosaic":
        return mosaic(imgs, center=params.get("center", (0.5, 0.5)))
    raise ValueError(f"unknown occlusion op: {op!r}")


# ---------------------------------------------------------------------------
# dataset generation


def variant_rng(seed: int, image_id: str, variant_index: int) -> np.random.Generator:
    """Counter-based stream keyed by (seed, image id, variant); order-independent."""
    digest = hashlib.blake2b(
        f"{seed}:{image_id}:{variant_index}".encode("utf-8"), digest_size=8
    ).digest()
    return np.random.default_rng(int.from_bytes(digest, "big"))


def augment_image(
    img: AnnotatedImage,
    spec: AugmentationSpec,
    variant_index: int,
    mosaic_pool: Sequence[AnnotatedImage] = (),
) -> AnnotatedImage:
    """Produce one augmented variant with parameters drawn from the keyed RNG.

    A quarter of variants become mosaics when enabled and partners exist;
    the rest run the geometric chain. Both finish with the photometric chain
    and (non-mosaic only) an optional cutout.
    """
    rng = variant_rng(spec.seed, img.id, variant_index)
    out_id = f"{img.id}_v{variant_index:03d}"

    use_mosaic = spec.mosaic and len(mosaic_pool) >= 3 and rng.random() < 0.25
    if use_mosaic:
        partner_idx = rng.choice(len(mosaic_pool), size=3, replace=False)
        center = (0.3 + 0.4 * rng.random(), 0.3 + 0.4 * rng.random())
        current = mosaic([img] + [mosaic_pool[int(i)] for i in partner_idx], center, out_id)
    else:
        current = img
        if spec.flip_horizontal and rng.random() < 0.5:
            current = flip(current, "horizontal")
        if spec.flip_vertical and rng.random() < 0.5:
            current = flip(current, "vertical")
        rot_modes = [
            mode
            for mode, enabled in (("cw", spec.rot90_cw), ("ccw", spec.rot90_ccw), ("180", spec.rot90_180))
            if enabled
        ]
        if rot_modes and rng.random() < 0.5:
            current = rot90(current, rot_modes[int(rng.integers(0, len(rot_modes)))])
        if spec.max_crop_zoom > 0:
            current = crop_zoom(
                current, rng.uniform(0.0, spec.max_crop_zoom), rng.random(), rng.random()
            )
        if spec.max_rotation_deg > 0:
            current = rotate(current, rng.uniform(-spec.max_rotation_deg, spec.max_rotation_deg))
        if spec.max_shear_h_deg > 0 or spec.max_shear_v_deg > 0:
            current = shear(
                current,
                rng.uniform(-spec.max_shear_h_deg, spec.max_shear_h_deg) if spec.max_shear_h_deg else 0.0,
                rng.uniform(-spec.max_shear_v_deg, spec.max_shear_v_deg) if spec.max_shear_v_deg else 0.0,
            )

    if spec.max_hue_deg > 0:
        current = hue_shift(current, rng.uniform(-spec.max_hue_deg, spec.max_hue_deg))
    if spec.max_saturation > 0:
        current = adjust_saturation(current, rng.uniform(-spec.max_saturation, spec.max_saturation))
    if spec.max_brightness > 0:
        current = adjust_brightness(current, rng.uniform(-spec.max_brightness, spec.max_brightness))
    if spec.max_exposure > 0:
        current = adjust_exposure(current, rng.uniform(-spec.max_exposure, spec.max_exposure))
    if spec.max_blur_px > 0:
        current = box_blur(current, rng.uniform(0.0, spec.max_blur_px))
    if spec.max_noise_frac > 0:
        current = salt_pepper_noise(
            current, rng.uniform(0.0, spec.max_noise_frac), int(rng.integers(0, 2**63))
        )
    if not use_mosaic and spec.cutout and spec.cutout_count > 0 and rng.random() < 0.5:
        current = cutout(
            current, int(rng.integers(0, 2**63)), spec.cutout_count, spec.cutout_size_frac
        )
    return replace(current, id=out_id)


@dataclass(frozen=True, eq=False)
class DatasetItem:
    image: AnnotatedImage
    split: Optional[str] = None


def generate_augmented_dataset(
    items: Sequence[DatasetItem],
    spec: AugmentationSpec,
    multipliers: Optional[Mapping[str, int]] = None,
) -> list[DatasetItem]:
    """Each source yields the original plus (multiplier - 1) seeded variants.

    Mosaic partners come from the same split only, so splits never bleed into
    each other. Deterministic for a fixed spec seed.
    """
    multipliers = multipliers or {}
    by_split: dict[str, list[AnnotatedImage]] = {}
    for item in items:
        by_split.setdefault(item.split, []).append(item.image)
    out: list[DatasetItem] = []
    for item in items:
        multiplier = multipliers.get(item.split, spec.outputs_per_image)
        if multiplier < 1:
            raise ValueError(f"multiplier for split {item.split!r} must be >= 1, got {multiplier}")
        out.append(item)
        pool = [img for img in by_split[item.split] if img is not item.image]
        for variant in range(1, multiplier):
            out.append(DatasetItem(augment_image(item.image, spec, variant, pool), item.split))
    return out
