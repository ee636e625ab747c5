"""Dense numeric kernels used by every other module.

All kernels take and return float32 ndarrays and are pure: the same input
produces a bit-identical output on a given platform. Shapes are validated
eagerly so failures name the offending operands instead of surfacing as
broadcast surprises deeper in the pipeline.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .errors import ShapeError

DTYPE = np.float32


def as_f32(x) -> np.ndarray:
    """Coerce to a float32 ndarray without copying when already f32."""
    return np.asarray(x, dtype=DTYPE)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of two 2-D float32 matrices."""
    a = as_f32(a)
    b = as_f32(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def row_softmax(s: np.ndarray) -> np.ndarray:
    """Softmax over the last axis with per-row max subtraction for stability."""
    s = as_f32(s)
    shifted = s - s.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Normalize each row to zero mean / unit variance, then apply the affine."""
    x = as_f32(x)
    gamma = as_f32(gamma)
    beta = as_f32(beta)
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeError(
            f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match width {x.shape[-1]}"
        )
    if eps <= 0:
        raise ShapeError(f"layer_norm eps must be positive, got {eps}")
    mean = x.mean(axis=-1, keepdims=True, dtype=DTYPE)
    var = np.square(x - mean).mean(axis=-1, keepdims=True, dtype=DTYPE)
    normed = (x - mean) / np.sqrt(var + DTYPE(eps))
    return normed * gamma + beta


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact (erf-based) GELU."""
    x = as_f32(x)
    return (DTYPE(0.5) * x * (1.0 + erf(x / np.sqrt(DTYPE(2.0))))).astype(DTYPE)


def quick_gelu(x: np.ndarray) -> np.ndarray:
    """Sigmoid-approximated GELU, x * sigmoid(1.702 x)."""
    x = as_f32(x)
    return x / (1.0 + np.exp(DTYPE(-1.702) * x))


ACTIVATIONS = {"gelu": gelu, "quick_gelu": quick_gelu}


def l2_normalize_rows(x: np.ndarray, eps: float = 0.0) -> np.ndarray:
    """Scale each row to unit L2 norm. Zero rows stay zero when eps == 0."""
    x = as_f32(x)
    norms = np.linalg.norm(x, axis=-1, keepdims=True).astype(DTYPE)
    safe = np.maximum(norms, DTYPE(eps)) if eps > 0 else np.where(norms == 0, DTYPE(1.0), norms)
    return x / safe


def bilinear_resize(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resample an (H, W) or (H, W, C) grid bilinearly (align-corners=False).

    Same-size calls return the input unchanged (exact passthrough).
    """
    grid = as_f32(grid)
    if grid.ndim == 2:
        return bilinear_resize(grid[:, :, None], out_h, out_w)[:, :, 0]
    if grid.ndim != 3:
        raise ShapeError(f"bilinear_resize expects (H, W) or (H, W, C), got {grid.shape}")
    in_h, in_w = grid.shape[:2]
    if in_h < 1 or in_w < 1 or out_h < 1 or out_w < 1:
        raise ShapeError(f"bilinear_resize dims must be >= 1, got {grid.shape} -> ({out_h}, {out_w})")
    if (in_h, in_w) == (out_h, out_w):
        return grid

    def axis_weights(n_in: int, n_out: int):
        # Half-pixel-center source coordinates, clamped to the border.
        src = (np.arange(n_out, dtype=np.float64) + 0.5) * n_in / n_out - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = (src - lo).astype(DTYPE)
        return lo, hi, frac

    y0, y1, fy = axis_weights(in_h, out_h)
    x0, x1, fx = axis_weights(in_w, out_w)

    rows0 = grid[y0]
    rows1 = grid[y1]
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = rows0[:, x0] * (1.0 - fx) + rows0[:, x1] * fx
    bot = rows1[:, x0] * (1.0 - fx) + rows1[:, x1] * fx
    return (top * (1.0 - fy) + bot * fy).astype(DTYPE)
