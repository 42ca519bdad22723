"""Thin PNG writers/readers (Pillow-backed)."""

from __future__ import annotations

import numpy as np
from PIL import Image


def save_png(image: np.ndarray, path) -> None:
    """uint8 grayscale (H, W) or RGB (H, W, 3)."""
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        raise ValueError("save_png expects uint8 data")
    Image.fromarray(arr).save(path, format="PNG")


def save_png_rgb01(image: np.ndarray, path) -> None:
    """Float RGB in [0, 1], rounded to 8 bits."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    save_png((arr * 255.0 + 0.5).astype(np.uint8), path)


def save_png_depth16(depth: np.ndarray, path) -> None:
    """Depth map normalized over its finite range to 16-bit grayscale;
    non-finite (background) maps to 0."""
    d = np.asarray(depth, dtype=np.float64)
    finite = np.isfinite(d)
    out = np.zeros(d.shape, dtype=np.uint16)
    if finite.any():
        lo = d[finite].min()
        hi = d[finite].max()
        span = hi - lo if hi > lo else 1.0
        norm = (d - lo) / span
        out[finite] = (norm[finite] * 65535.0 + 0.5).astype(np.uint16)
    Image.fromarray(out, mode="I;16").save(path, format="PNG")


def load_png(path) -> np.ndarray:
    return np.asarray(Image.open(path))
