"""Image array conventions, range conversions, and 8-bit PNG I/O.

Images and feature maps are rank-4 float32 arrays (batch, channel, height,
width). Two value ranges appear at module boundaries and are always named:

* ``unit``:   [0, 1] — degradation synthesis and file storage.
* ``signed``: [-1, 1] — network inputs/outputs (``unit * 2 - 1``).

Spatial sizes fed to the networks must be multiples of 8 (three exact
stride-2 downsamplings).
"""

from __future__ import annotations

import os

import numpy as np
from PIL import Image

from .errors import DataError, ShapeError

__all__ = [
    "to_signed",
    "to_unit",
    "to_uint8",
    "from_uint8",
    "load_png",
    "save_png",
    "validate_image",
    "require_spatial_multiple",
]


def to_signed(img):
    """Map unit-range values to signed range: ``x * 2 - 1``."""
    return img * 2.0 - 1.0


def to_unit(img):
    """Map signed-range values to unit range: ``(x + 1) / 2``."""
    return (img + 1.0) / 2.0


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Quantize a unit-range (C, H, W) array to uint8 (H, W, C)."""
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.round(arr * 255.0).astype(np.uint8).transpose(1, 2, 0)


def from_uint8(arr: np.ndarray) -> np.ndarray:
    """Dequantize uint8 (H, W, C) to unit-range float32 (C, H, W)."""
    return (arr.astype(np.float32) / np.float32(255.0)).transpose(2, 0, 1)


def load_png(path: str | os.PathLike) -> np.ndarray:
    """Load an 8-bit RGB image file as unit-range float32 (3, H, W)."""
    try:
        with Image.open(path) as im:
            rgb = im.convert("RGB")
            arr = np.asarray(rgb, dtype=np.uint8)
    except FileNotFoundError as exc:
        raise DataError(f"image file not found: {path}") from exc
    except OSError as exc:
        raise DataError(f"cannot read image file {path}: {exc}") from exc
    return from_uint8(arr)


def save_png(path: str | os.PathLike, img: np.ndarray) -> None:
    """Write a unit-range (3, H, W) array as an 8-bit RGB PNG."""
    if img.ndim != 3 or img.shape[0] != 3:
        raise ShapeError(f"expected (3, H, W) image, got {img.shape}")
    Image.fromarray(to_uint8(img), mode="RGB").save(path, format="PNG")


def validate_image(img: np.ndarray, value_range: str = "unit") -> None:
    """Check rank-4 shape, finiteness, and declared value range.

    Args:
        img: candidate (B, C, H, W) array.
        value_range: "unit" for [0, 1] or "signed" for [-1, 1].

    Raises:
        ShapeError: wrong rank.
        NumericError-adjacent ValueError: values outside the declared range
            or non-finite. Range violations are programming errors upstream,
            so a plain ValueError is deliberate here.
    """
    if img.ndim != 4:
        raise ShapeError(f"expected rank-4 (B, C, H, W) array, got rank {img.ndim}")
    lo, hi = (0.0, 1.0) if value_range == "unit" else (-1.0, 1.0)
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    if img.min() < lo or img.max() > hi:
        raise ValueError(
            f"values [{img.min():.4g}, {img.max():.4g}] outside {value_range} "
            f"range [{lo}, {hi}]"
        )


def require_spatial_multiple(h: int, w: int, multiple: int = 8) -> None:
    """Reject spatial sizes that stride-2 stages cannot divide exactly."""
    if h % multiple or w % multiple:
        raise ShapeError(f"spatial size {h}x{w} must be a multiple of {multiple}")
