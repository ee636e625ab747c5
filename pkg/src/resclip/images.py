"""8-bit image I/O: RGB inputs, index-map and colorized outputs."""

from __future__ import annotations

import numpy as np
from PIL import Image

from .errors import ValidationError


def load_image(path) -> np.ndarray:
    """Read a PNG/PPM image as float32 RGB in [0, 1], shape (H, W, 3)."""
    with Image.open(path) as im:
        rgb = im.convert("RGB")
        return np.asarray(rgb, dtype=np.float32) / 255.0


def load_label_map(path) -> np.ndarray:
    """Read a single-channel class-index PNG (255 = ignore) as int32."""
    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim != 2:
        raise ValidationError(f"{path}: label map must be single-channel, got shape {arr.shape}")
    return arr.astype(np.int32)


def save_index_png(seg: np.ndarray, path) -> None:
    """Write a segmentation map as an 8-bit single-channel PNG."""
    seg = np.asarray(seg)
    if seg.min() < 0 or seg.max() > 255:
        raise ValidationError(f"class indices out of 8-bit range: [{seg.min()}, {seg.max()}]")
    Image.fromarray(seg.astype(np.uint8), mode="L").save(path)


def color_palette(n: int) -> np.ndarray:
    """Deterministic (n, 3) uint8 palette (bit-reversal scheme, class 0 black)."""
    pal = np.zeros((n, 3), dtype=np.uint8)
    for i in range(n):
        c, r, g, b = i, 0, 0, 0
        for j in range(8):
            r |= ((c >> 0) & 1) << (7 - j)
            g |= ((c >> 1) & 1) << (7 - j)
            b |= ((c >> 2) & 1) << (7 - j)
            c >>= 3
        pal[i] = (r, g, b)
    return pal


def save_colorized_png(seg: np.ndarray, path, num_classes: int | None = None) -> None:
    """Write a palette-colorized RGB rendering of a segmentation map."""
    seg = np.asarray(seg)
    n = int(num_classes if num_classes is not None else seg.max() + 1)
    pal = color_palette(max(n, 1))
    Image.fromarray(pal[seg], mode="RGB").save(path)
