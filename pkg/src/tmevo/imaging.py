"""Image model and pixel-space measurements.

Images are float64 numpy arrays of shape (H, W, C) with values in [0, 1].
File I/O quantizes to 8-bit (value = byte / 255); PNG is the primary format
and binary PPM (P6) is kept as a debug-friendly fallback. Both are lossless
for 8-bit data.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

__all__ = [
    "BoundingBox",
    "clamp_image",
    "diff_mask",
    "iou",
    "l0_norm",
    "l2_norm",
    "load_image",
    "mask_from_boxes",
    "png_bytes",
    "quantize",
    "save_image",
]


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in pixel coordinates, half-open: covers x in
    [x_min, x_max) and y in [y_min, y_max)."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate box {self}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def pixel_slices(self, height: int, width: int) -> tuple[slice, slice]:
        """Integer (row, col) slices of the pixels this box covers, clipped
        to the image bounds."""
        y0 = max(0, int(np.floor(self.y_min)))
        x0 = max(0, int(np.floor(self.x_min)))
        y1 = min(height, int(np.ceil(self.y_max)))
        x1 = min(width, int(np.ceil(self.x_max)))
        return slice(y0, y1), slice(x0, x1)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two boxes; 0.0 when disjoint."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union


def mask_from_boxes(boxes, height: int, width: int) -> np.ndarray:
    """Boolean (H, W) mask of pixels covered by the union of the boxes.

    Each pixel counts once regardless of how many boxes cover it.
    """
    mask = np.zeros((height, width), dtype=bool)
    for box in boxes:
        ys, xs = box.pixel_slices(height, width)
        mask[ys, xs] = True
    return mask


def _check_pair(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape or a.ndim != 3:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def diff_mask(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Boolean (H, W) mask of pixels where any channel differs exactly."""
    _check_pair(a, b)
    return np.any(a != b, axis=2)


def l0_norm(a: np.ndarray, b: np.ndarray) -> int:
    """Count of differing pixels (a pixel with any differing channel counts
    once, not per channel)."""
    return int(diff_mask(a, b).sum())


def l2_norm(a: np.ndarray, b: np.ndarray) -> float:
    """Euclidean distance over all channel values."""
    _check_pair(a, b)
    d = a - b
    return float(np.sqrt(np.sum(d * d)))


def clamp_image(img: np.ndarray) -> np.ndarray:
    """Clip values into [0, 1]. Idempotent."""
    return np.clip(img, 0.0, 1.0)


def quantize(img: np.ndarray) -> np.ndarray:
    """8-bit quantization used by the file formats."""
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def save_image(img: np.ndarray, path: str | Path):
    """Write a PNG or PPM (P6) file, chosen by extension."""
    path = Path(path)
    pil = PILImage.fromarray(quantize(img), mode="RGB")
    suffix = path.suffix.lower()
    if suffix == ".png":
        pil.save(path, format="PNG")
    elif suffix in (".ppm", ".pnm"):
        pil.save(path, format="PPM")
    else:
        raise ValueError(f"unsupported image extension: {path.suffix!r}")


def load_image(path: str | Path) -> np.ndarray:
    """Read a PNG or PPM file into a float64 (H, W, 3) array in [0, 1]."""
    with PILImage.open(path) as pil:
        arr = np.asarray(pil.convert("RGB"), dtype=np.uint8)
    return arr.astype(np.float64) / 255.0


def png_bytes(img: np.ndarray) -> bytes:
    """PNG encoding of the quantized image, for wire transfer."""
    buf = io.BytesIO()
    PILImage.fromarray(quantize(img), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()
