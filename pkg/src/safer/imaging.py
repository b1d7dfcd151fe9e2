"""Shared image I/O and raster helpers.

Images are float64 RGB arrays in [0, 1], shape (H, W, 3), throughout the
pipeline; conversion to uint8 happens only at file boundaries.
"""

from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np
from PIL import Image

from .errors import SaferError


def load_image(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise SaferError(f"image file not found: {path}")
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr


def save_image(path: str | Path, image: np.ndarray) -> Path:
    """Write an RGB [0,1] float image (or a single-channel one) as PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = to_uint8(image)
    Image.fromarray(arr).save(path)
    return path


def to_uint8(image: np.ndarray) -> np.ndarray:
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return np.round(arr * 255.0).astype(np.uint8)


def resize(image: np.ndarray, size: int) -> np.ndarray:
    """Resize to size x size with bilinear interpolation; identity when equal."""
    h, w = image.shape[:2]
    if h == size and w == size:
        return image
    out = cv2.resize(image, (size, size), interpolation=cv2.INTER_LINEAR)
    return np.clip(out, 0.0, 1.0)


def load_mask(path: str | Path, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Load a single-channel mask PNG; nonzero pixels mark the subject."""
    path = Path(path)
    if not path.exists():
        raise SaferError(f"mask file not found: {path}")
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    mask = arr > 0
    if shape is not None and mask.shape != shape:
        raise SaferError(
            f"mask {path} has shape {mask.shape}, expected {shape}"
        )
    return mask


def save_mask(path: str | Path, mask: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray((mask.astype(np.uint8)) * 255).save(path)
    return path
