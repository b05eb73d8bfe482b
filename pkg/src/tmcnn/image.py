"""Grayscale image I/O and basic raster ops.

Images are 2-D float arrays with values in [0, 1], indexed [row, col].
"""

from __future__ import annotations

import numpy as np
import scipy.ndimage
from PIL import Image

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def load_png(path) -> np.ndarray:
    """Load a PNG as a float64 grayscale array in [0, 1].

    Color images are reduced with the classic luma weights
    0.299 R + 0.587 G + 0.114 B before scaling by 1/255.
    """
    with Image.open(path) as im:
        if im.mode in ("L", "I;16", "I"):
            arr = np.asarray(im.convert("L"), dtype=np.float64)
        else:
            rgb = np.asarray(im.convert("RGB"), dtype=np.float64)
            wr, wg, wb = LUMA_WEIGHTS
            arr = wr * rgb[..., 0] + wg * rgb[..., 1] + wb * rgb[..., 2]
    return arr / 255.0


def save_png(img: np.ndarray, path) -> None:
    """Write a [0, 1] float image as 8-bit grayscale.

    Values are clipped, then scaled by 255 and rounded half away from
    zero, so 0.5/255 input maps to pixel value 1.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {img.shape}")
    u8 = np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(u8, mode="L").save(path, format="PNG")


def median_filter(img: np.ndarray, size: int = 3) -> np.ndarray:
    """Median filter with an odd square window and edge replication."""
    if size < 1 or size % 2 == 0:
        raise ValueError(f"window size must be odd and positive, got {size}")
    img = np.asarray(img, dtype=np.float64)
    return scipy.ndimage.median_filter(img, size=size, mode="nearest")


def resize(img: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Bilinear resize to ``shape`` = (height, width).

    Uses the half-pixel center convention: destination pixel (r, c)
    samples the source at ((r + 0.5) * H/h - 0.5, (c + 0.5) * W/w - 0.5),
    clamped to the image. Resizing to the same shape is the identity.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {img.shape}")
    out_h, out_w = shape
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target shape must be positive, got {shape}")
    src_h, src_w = img.shape

    # sample positions along each axis, clamped so edge pixels replicate
    ys = np.clip((np.arange(out_h) + 0.5) * (src_h / out_h) - 0.5, 0.0, src_h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * (src_w / out_w) - 0.5, 0.0, src_w - 1.0)

    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, src_h - 1)
    x1 = np.minimum(x0 + 1, src_w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]

    top = img[np.ix_(y0, x0)] * (1.0 - fx) + img[np.ix_(y0, x1)] * fx
    bot = img[np.ix_(y1, x0)] * (1.0 - fx) + img[np.ix_(y1, x1)] * fx
    return top * (1.0 - fy) + bot * fy
