"""Semantic feedback refinement.

A coarse patch-level segmentation map is turned into an hw x hw score
matrix: per anchor patch, same-class patches get weight 1 when they are
connected to the anchor, a Chebyshev-distance decayed weight when they are
a disjoint region of the same class, and 0 otherwise. Each row is then
smoothed with a normalized Gaussian and blended into the base scores.

Rows are independent of one another, so everything here is pure and safe
to parallelize over rows or whole maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .tensor_ops import DTYPE, row_softmax


@dataclass
class GaussianSpec:
    """Smoothing kernel: odd size, positive sigma.

    two_dim smooths each row over the h x w grid (separable) instead of
    along the flattened axis.
    """

    size: int = 5
    sigma: float = 1.0
    two_dim: bool = False

    def __post_init__(self):
        if self.size < 1 or self.size % 2 == 0:
            raise ValidationError(f"Gaussian kernel size must be odd and >= 1, got {self.size}")
        if self.sigma <= 0:
            raise ValidationError(f"Gaussian sigma must be > 0, got {self.sigma}")


def gaussian_kernel(spec: GaussianSpec) -> np.ndarray:
    """Normalized 1-D Gaussian taps, float64 so the taps sum to 1 exactly
    enough that smoothing a constant row is a fixed point in float32."""
    offsets = np.arange(spec.size, dtype=np.float64) - spec.size // 2
    g = np.exp(-(offsets**2) / (2.0 * spec.sigma**2))
    return g / g.sum()


def _smooth_axis(rows: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Correlate each row with the kernel under replicate edge padding."""
    pad = kernel.shape[0] // 2
    if pad == 0:
        return rows.astype(np.float64)
    padded = np.pad(rows, [(0, 0)] * (rows.ndim - 1) + [(pad, pad)], mode="edge")
    out = np.zeros(rows.shape, dtype=np.float64)
    for t, g in enumerate(kernel):
        out += g * padded[..., t : t + rows.shape[-1]]
    return out


def smooth_rows(rows: np.ndarray, grid: tuple[int, int], spec: GaussianSpec) -> np.ndarray:
    """Apply the Gaussian to each row of an (n, hw) matrix."""
    kernel = gaussian_kernel(spec)
    if not spec.two_dim:
        return _smooth_axis(rows, kernel).astype(DTYPE)
    h, w = grid
    shaped = rows.reshape(rows.shape[0], h, w)
    shaped = _smooth_axis(shaped, kernel)
    shaped = _smooth_axis(shaped.transpose(0, 2, 1), kernel).transpose(0, 2, 1)
    return shaped.reshape(rows.shape[0], h * w).astype(DTYPE)


def _check_map(m: np.ndarray) -> tuple[int, int]:
    m = np.asarray(m)
    if m.ndim != 2:
        raise ValidationError(f"segmentation map must be 2-D, got shape {m.shape}")
    return m.shape


def _check_index(i: int, hw: int) -> None:
    if not 0 <= i < hw:
        raise ValidationError(f"token index {i} outside [0, {hw})")


def build_row_mask(m: np.ndarray, i: int) -> np.ndarray:
    """Same-class indicator row for anchor patch i (flattened h*w, row-major)."""
    h, w = _check_map(m)
    _check_index(i, h * w)
    anchor_class = m[i // w, i % w]
    return (m.reshape(-1) == anchor_class).astype(DTYPE)


def label_components(m: np.ndarray, connectivity: int = 8) -> np.ndarray:
    """Label same-class connected regions of the map (8- or 4-neighborhood)."""
    if connectivity not in (4, 8):
        raise ValidationError(f"connectivity must be 4 or 8, got {connectivity}")
    h, w = _check_map(m)
    labels = np.full((h, w), -1, dtype=np.int32)
    if connectivity == 8:
        steps = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))
    else:
        steps = ((-1, 0), (0, -1), (0, 1), (1, 0))
    next_label = 0
    for sy in range(h):
        for sx in range(w):
            if labels[sy, sx] >= 0:
                continue
            cls = m[sy, sx]
            stack = [(sy, sx)]
            labels[sy, sx] = next_label
            while stack:
                y, x = stack.pop()
                for dy, dx in steps:
                    ny, nx = y + dy, x + dx
                    if 0 <= ny < h and 0 <= nx < w and labels[ny, nx] < 0 and m[ny, nx] == cls:
                        labels[ny, nx] = next_label
                        stack.append((ny, nx))
            next_label += 1
    return labels


def reachability(m: np.ndarray, i: int, connectivity: int = 8) -> np.ndarray:
    """Row marking patches connected to anchor i through same-class cells."""
    h, w = _check_map(m)
    _check_index(i, h * w)
    comp = label_components(m, connectivity).reshape(-1)
    return (comp == comp[i]).astype(DTYPE)


def chebyshev_distance(p: tuple[int, int], q: tuple[int, int]) -> int:
    return max(abs(p[0] - q[0]), abs(p[1] - q[1]))


def decay_row(i: int, h: int, w: int) -> np.ndarray:
    """exp(-chebyshev / d_max) from anchor i to every patch; 1 at the anchor.

    d_max is the largest distance realizable on the grid, max(h-1, w-1),
    treated as 1 on a 1x1 grid.
    """
    _check_index(i, h * w)
    ay, ax = divmod(i, w)
    ys, xs = np.divmod(np.arange(h * w), w)
    cheb = np.maximum(np.abs(ys - ay), np.abs(xs - ax))
    d_max = max(h - 1, w - 1, 1)
    return np.exp(-cheb / np.float64(d_max)).astype(DTYPE)


def _decay_matrix(h: int, w: int) -> np.ndarray:
    ys, xs = np.divmod(np.arange(h * w), w)
    cheb = np.maximum(np.abs(ys[:, None] - ys[None, :]), np.abs(xs[:, None] - xs[None, :]))
    d_max = max(h - 1, w - 1, 1)
    return np.exp(-cheb / np.float64(d_max)).astype(DTYPE)


def sfr_matrix(m: np.ndarray, smooth: GaussianSpec | None = None, connectivity: int = 8) -> np.ndarray:
    """Full hw x hw feedback score matrix for a patch segmentation map.

    Row i is the smoothed product of the same-class mask with the decay
    profile: 1 on patches reachable from the anchor, exp-decayed on
    same-class patches in disjoint regions, 0 elsewhere.
    """
    smooth = smooth or GaussianSpec()
    h, w = _check_map(m)
    flat = np.asarray(m).reshape(-1)
    comp = label_components(m, connectivity).reshape(-1)
    mask = flat[:, None] == flat[None, :]
    reach = comp[:, None] == comp[None, :]
    decay = _decay_matrix(h, w)
    profile = np.where(reach, DTYPE(1.0), decay)
    pre = np.where(mask, profile, DTYPE(0.0))
    return smooth_rows(pre, (h, w), smooth)


def blend_sfr(s_s: np.ndarray, s_hat: np.ndarray, lambda_sfr: float, gain: float = 1.0) -> np.ndarray:
    """Blend feedback scores into base scores on the patch-patch block.

    s_s has shape (..., 1+hw, 1+hw); s_hat covers only patch tokens, so the
    cls row and column pass through unchanged.
    """
    if not 0.0 <= lambda_sfr <= 1.0:
        raise ValidationError(f"lambda_sfr must be in [0, 1], got {lambda_sfr}")
    hw = s_hat.shape[-1]
    if s_s.shape[-1] != hw + 1 or s_s.shape[-2] != hw + 1:
        raise ValidationError(
            f"score shape {s_s.shape} does not extend feedback shape {s_hat.shape} by a cls token"
        )
    if lambda_sfr == 0.0:
        return s_s.copy()
    lam = DTYPE(lambda_sfr)
    out = s_s.copy()
    out[..., 1:, 1:] = (DTYPE(1.0) - lam) * s_s[..., 1:, 1:] + lam * (DTYPE(gain) * s_hat)
    return out


def resclip_attention(s_r: np.ndarray, a_c: np.ndarray, lambda_rcs: float) -> np.ndarray:
    """Final attention: softmax of refined scores blended with the
    cross-layer average."""
    if not 0.0 <= lambda_rcs <= 1.0:
        raise ValidationError(f"lambda_rcs must be in [0, 1], got {lambda_rcs}")
    a_sfr = row_softmax(s_r)
    if lambda_rcs == 0.0:
        return a_sfr
    if lambda_rcs == 1.0:
        return a_c.copy()
    lam = DTYPE(lambda_rcs)
    return (DTYPE(1.0) - lam) * a_sfr + lam * a_c
