"""End-to-end dense inference.

A single window goes through the recorded forward pass once; the final
block's attention is rebuilt from the configured base mode, the
cross-layer average, and (on feedback passes) the semantic feedback
scores. Whole images are tiled with overlapping windows whose upsampled
logits are averaged per pixel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import AggregationSpec, BaseMode, aggregate_cross_correlation, rcs_blend, scsa_scores
from .backbone import LastBlockState, forward_record, merge_heads, mlp_block, patch_embed
from .errors import ValidationError
from .sfr import GaussianSpec, blend_sfr, resclip_attention, sfr_matrix
from .tensor_ops import DTYPE, as_f32, bilinear_resize, layer_norm, row_softmax
from .weights_io import ClassEmbeddingMatrix, WeightsBundle


@dataclass
class SurgeryConfig:
    """Every knob of the attention surgery and the inference protocol."""

    mode: BaseMode = field(default_factory=BaseMode)
    lambda_rcs: float = 0.5
    lambda_sfr: float = 0.7
    agg: AggregationSpec = field(default_factory=AggregationSpec)
    gaussian: GaussianSpec = field(default_factory=GaussianSpec)
    gain: float = 1.0
    feedback_passes: int = 1
    window: int = 224
    stride: int = 112
    short_side: int = 336
    head_avg: bool = False
    connectivity: int = 8

    def __post_init__(self):
        for name in ("lambda_rcs", "lambda_sfr"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name} must be in [0, 1], got {v}")
        if not self.window >= self.stride >= 1:
            raise ValidationError(f"need window >= stride >= 1, got {self.window}/{self.stride}")
        if self.short_side < self.window:
            raise ValidationError(
                f"short_side {self.short_side} smaller than window {self.window}"
            )
        if self.feedback_passes < 0:
            raise ValidationError(f"feedback_passes must be >= 0, got {self.feedback_passes}")
        if self.connectivity not in (4, 8):
            raise ValidationError(f"connectivity must be 4 or 8, got {self.connectivity}")

    def as_dict(self) -> dict:
        return {
            "mode": self.mode.kind,
            "keep_residual": self.mode.resolved_flags()[0],
            "keep_ffn": self.mode.resolved_flags()[1],
            "prior_sigma": self.mode.prior_sigma,
            "lambda_rcs": self.lambda_rcs,
            "lambda_sfr": self.lambda_sfr,
            "agg": f"{self.agg.strategy} {self.agg.start}:{self.agg.end}",
            "gauss_size": self.gaussian.size,
            "gauss_sigma": self.gaussian.sigma,
            "gauss_2d": self.gaussian.two_dim,
            "gain": self.gain,
            "feedback_passes": self.feedback_passes,
            "window": self.window,
            "stride": self.stride,
            "short_side": self.short_side,
            "head_avg": self.head_avg,
            "connectivity": self.connectivity,
        }


def normalize_image(image: np.ndarray, bundle: WeightsBundle) -> np.ndarray:
    """Standardize an RGB image in [0, 1] with the bundle's mean/std."""
    mean = np.asarray(bundle.meta.mean, dtype=DTYPE)
    std = np.asarray(bundle.meta.std, dtype=DTYPE)
    return ((as_f32(image) - mean) / std).astype(DTYPE)


def resize_short_side(image: np.ndarray, target: int) -> np.ndarray:
    """Bilinearly resize so the shorter side equals target, keeping aspect."""
    h, w = image.shape[:2]
    if h <= w:
        out_h, out_w = target, max(1, round(w * target / h))
    else:
        out_h, out_w = max(1, round(h * target / w)), target
    return bilinear_resize(image, out_h, out_w)


def _cross_layer_attention(trace: np.ndarray, cfg: SurgeryConfig) -> np.ndarray | None:
    if cfg.lambda_rcs == 0.0:
        return None
    a_c = aggregate_cross_correlation(trace, cfg.agg)
    if cfg.head_avg:
        a_c = np.broadcast_to(a_c.mean(axis=0, dtype=DTYPE), a_c.shape).astype(DTYPE)
    return a_c


def _surgery_features(
    state: LastBlockState,
    trace: np.ndarray,
    bundle: WeightsBundle,
    cfg: SurgeryConfig,
    sfr_mask: np.ndarray | None,
) -> np.ndarray:
    """Apply the rebuilt final-block attention and project to text space."""
    meta = bundle.meta
    lp = bundle.layers[-1]
    s_s = scsa_scores(state, cfg.mode)
    a_c = _cross_layer_attention(trace, cfg)

    if sfr_mask is None:
        a_s = row_softmax(s_s)
        attn = a_s if a_c is None else rcs_blend(a_s, a_c, cfg.lambda_rcs)
    else:
        s_hat = sfr_matrix(sfr_mask, cfg.gaussian, cfg.connectivity)
        s_r = blend_sfr(s_s, s_hat, cfg.lambda_sfr, cfg.gain)
        attn = row_softmax(s_r) if a_c is None else resclip_attention(s_r, a_c, cfg.lambda_rcs)

    out = merge_heads(np.matmul(attn, state.v)) @ lp.wo + lp.bo
    keep_residual, keep_ffn = cfg.mode.resolved_flags()
    x = state.tokens_pre + out if keep_residual else out
    if keep_ffn:
        x = x + mlp_block(x, lp, meta.act, meta.eps)
    x = layer_norm(x, bundle.final_ln_gamma, bundle.final_ln_beta, meta.eps)
    x = x @ bundle.visual_proj
    return x[1:]


def dense_features(
    image: np.ndarray,
    bundle: WeightsBundle,
    cfg: SurgeryConfig,
    sfr_mask: np.ndarray | None = None,
) -> np.ndarray:
    """Patch features (hw x text_dim) for a normalized, patch-aligned image."""
    seq = patch_embed(image, bundle)
    state, trace = forward_record(seq, bundle)
    return _surgery_features(state, trace, bundle, cfg, sfr_mask)


def dense_logits(
    features: np.ndarray, classes: ClassEmbeddingMatrix, grid: tuple[int, int]
) -> np.ndarray:
    """Cosine similarity per patch per class, shaped (h, w, C).

    Degenerate zero-norm feature rows get logits of -1 across all classes.
    """
    h, w = grid
    if features.shape[0] != h * w:
        raise ValidationError(f"{features.shape[0]} feature rows for grid {h}x{w}")
    if features.shape[1] != classes.embeds.shape[1]:
        raise ValidationError(
            f"feature dim {features.shape[1]} != text dim {classes.embeds.shape[1]}"
        )
    norms = np.linalg.norm(features, axis=1, keepdims=True).astype(DTYPE)
    zero = norms[:, 0] == 0
    normed = features / np.where(norms == 0, DTYPE(1.0), norms)
    logits = normed @ classes.embeds.T
    logits[zero] = DTYPE(-1.0)
    return logits.reshape(h, w, classes.num_classes)


def resclip_infer(
    image: np.ndarray,
    bundle: WeightsBundle,
    classes: ClassEmbeddingMatrix,
    cfg: SurgeryConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Two-phase dense inference on one normalized window.

    The first pass segments without feedback; each configured feedback pass
    rebuilds the attention from the current map and re-segments. Returns
    the final patch-level map (h, w) and its logits (h, w, C).
    """
    seq = patch_embed(image, bundle)
    state, trace = forward_record(seq, bundle)
    grid = seq.grid

    feats = _surgery_features(state, trace, bundle, cfg, None)
    logits = dense_logits(feats, classes, grid)
    seg = logits.argmax(axis=-1).astype(np.int32)
    for _ in range(cfg.feedback_passes):
        feats = _surgery_features(state, trace, bundle, cfg, seg)
        logits = dense_logits(feats, classes, grid)
        seg = logits.argmax(axis=-1).astype(np.int32)
    return seg, logits


def tile_starts(size: int, window: int, stride: int) -> list[int]:
    """Window origins covering [0, size): stride steps, last one edge-aligned."""
    if size <= window:
        return [0]
    starts = list(range(0, size - window + 1, stride))
    if starts[-1] != size - window:
        starts.append(size - window)
    return starts


def sliding_window_infer(
    image: np.ndarray,
    bundle: WeightsBundle,
    classes: ClassEmbeddingMatrix,
    cfg: SurgeryConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Tile an RGB image (already short-side resized, values in [0, 1]) and
    average overlapping tile logits per pixel.

    Images smaller than the window are edge-padded for inference and the
    result is cropped back. Returns pixel logits (H, W, C) and the argmax
    map (H, W).
    """
    if cfg.window % bundle.meta.patch_size != 0:
        raise ValidationError(
            f"window {cfg.window} not divisible by patch size {bundle.meta.patch_size}"
        )
    h, w = image.shape[:2]
    pad_h, pad_w = max(cfg.window - h, 0), max(cfg.window - w, 0)
    padded = image
    if pad_h or pad_w:
        padded = np.pad(image, ((0, pad_h), (0, pad_w), (0, 0)), mode="edge")
    ph, pw = padded.shape[:2]
    norm = normalize_image(padded, bundle)

    sums = np.zeros((ph, pw, classes.num_classes), dtype=DTYPE)
    counts = np.zeros((ph, pw), dtype=DTYPE)
    for y in tile_starts(ph, cfg.window, cfg.stride):
        for x in tile_starts(pw, cfg.window, cfg.stride):
            tile = norm[y : y + cfg.window, x : x + cfg.window]
            _seg, logits = resclip_infer(tile, bundle, classes, cfg)
            up = bilinear_resize(logits, cfg.window, cfg.window)
            sums[y : y + cfg.window, x : x + cfg.window] += up
            counts[y : y + cfg.window, x : x + cfg.window] += DTYPE(1.0)
    pixel_logits = (sums / counts[:, :, None])[:h, :w]
    return pixel_logits, pixel_logits.argmax(axis=-1).astype(np.int32)


def segment_image(
    image: np.ndarray,
    bundle: WeightsBundle,
    classes: ClassEmbeddingMatrix,
    cfg: SurgeryConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Full-protocol inference on an arbitrary-size RGB image in [0, 1].

    Resizes the short side, runs sliding-window inference, and resamples
    the averaged logits back to the input resolution. Returns the pixel
    map (H, W) and logits (H, W, C) at the original size.
    """
    h, w = image.shape[:2]
    resized = resize_short_side(image, cfg.short_side)
    logits, _seg = sliding_window_infer(resized, bundle, classes, cfg)
    full = bilinear_resize(logits, h, w)
    return full.argmax(axis=-1).astype(np.int32), full


def center_crop(image: np.ndarray, size: int) -> np.ndarray:
    """Central size x size crop; the image must already be at least that big."""
    h, w = image.shape[:2]
    if h < size or w < size:
        raise ValidationError(f"image {h}x{w} smaller than crop {size}")
    top = (h - size) // 2
    left = (w - size) // 2
    return image[top : top + size, left : left + size]


def attention_snapshot(
    image: np.ndarray,
    bundle: WeightsBundle,
    classes: ClassEmbeddingMatrix,
    cfg: SurgeryConfig,
) -> dict[str, np.ndarray | tuple[int, int]]:
    """Every attention stage for one normalized window, for inspection.

    Returns the recorded per-layer trace, the base map, the aggregated
    cross-layer map, their blend, the refined final map, the first-pass
    patch segmentation used as the same-class mask, and the patch grid.
    Unlike the inference path, every stage is materialized regardless of
    the blend weights.
    """
    seq = patch_embed(image, bundle)
    state, trace = forward_record(seq, bundle)
    grid = seq.grid

    s_s = scsa_scores(state, cfg.mode)
    a_s = row_softmax(s_s)
    a_c = aggregate_cross_correlation(trace, cfg.agg)
    if cfg.head_avg:
        a_c = np.broadcast_to(a_c.mean(axis=0, dtype=DTYPE), a_c.shape).astype(DTYPE)
    a_rcs = rcs_blend(a_s, a_c, cfg.lambda_rcs)

    feats = _surgery_features(state, trace, bundle, cfg, None)
    seg = dense_logits(feats, classes, grid).argmax(axis=-1).astype(np.int32)
    s_hat = sfr_matrix(seg, cfg.gaussian, cfg.connectivity)
    s_r = blend_sfr(s_s, s_hat, cfg.lambda_sfr, cfg.gain)
    a_final = resclip_attention(s_r, a_c, cfg.lambda_rcs)

    return {
        "trace": trace,
        "base": a_s,
        "aggregated": a_c,
        "blended": a_rcs,
        "final": a_final,
        "seg": seg,
        "grid": grid,
    }
