"""Patch embedding and the recorded transformer forward pass.

The forward pass runs every block except the last with standard attention,
recording each layer's per-head post-softmax attention. The final block's
q/k/v are computed from its own parameters but its attention is never
applied here; the surgery in the pipeline decides what replaces it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError
from .tensor_ops import ACTIVATIONS, DTYPE, as_f32, bilinear_resize, layer_norm, row_softmax
from .weights_io import LayerParams, WeightsBundle


@dataclass
class TokenSequence:
    tokens: np.ndarray          # (1 + h*w, d), row 0 is the cls token
    grid: tuple[int, int]


@dataclass
class LastBlockState:
    """Token state entering the final block plus that block's q/k/v."""

    tokens_pre: np.ndarray      # (1 + h*w, d)
    q: np.ndarray               # (heads, 1 + h*w, head_dim)
    k: np.ndarray
    v: np.ndarray
    grid: tuple[int, int]


def split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    """(N, d) -> (heads, N, d // heads)."""
    n, d = x.shape
    return x.reshape(n, heads, d // heads).transpose(1, 0, 2)


def merge_heads(x: np.ndarray) -> np.ndarray:
    """(heads, N, head_dim) -> (N, d)."""
    h, n, dh = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * dh)


def interpolate_pos_embed(pos: np.ndarray, h: int, w: int) -> np.ndarray:
    """Resample patch positional embeddings from their square source grid.

    The cls row is copied verbatim; the remaining rows are treated as an
    h0 x w0 grid and bilinearly resized to h x w.
    """
    pos = as_f32(pos)
    n = pos.shape[0] - 1
    h0 = math.isqrt(n)
    if h0 * h0 != n:
        raise ValidationError(f"pos_embed patch grid ({n} rows) is not square")
    if (h, w) == (h0, h0):
        return pos
    d = pos.shape[1]
    patch = pos[1:].reshape(h0, h0, d)
    resized = bilinear_resize(patch, h, w).reshape(h * w, d)
    return np.concatenate([pos[:1], resized], axis=0)


def patch_embed(image: np.ndarray, bundle: WeightsBundle) -> TokenSequence:
    """Project a normalized H x W x 3 image into a token sequence.

    H and W must be divisible by the patch size; callers pad or crop first.
    """
    image = as_f32(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"patch_embed expects (H, W, 3), got {image.shape}")
    p = bundle.meta.patch_size
    hh, ww = image.shape[:2]
    if hh % p or ww % p:
        raise ShapeError(f"image dims {hh}x{ww} not divisible by patch size {p}")
    h, w = hh // p, ww // p

    # (h, w, c, py, px) flattened channel-major to match patch_proj's row order.
    patches = (
        image.reshape(h, p, w, p, 3)
        .transpose(0, 2, 4, 1, 3)
        .reshape(h * w, 3 * p * p)
    )
    tokens = patches @ bundle.patch_proj
    tokens = np.concatenate([bundle.cls_token[None, :], tokens], axis=0)
    tokens = tokens + interpolate_pos_embed(bundle.pos_embed, h, w)
    return TokenSequence(tokens=tokens.astype(DTYPE), grid=(h, w))


def _qkv(x: np.ndarray, lp: LayerParams, heads: int, eps: float):
    xn = layer_norm(x, lp.ln1_gamma, lp.ln1_beta, eps)
    q = split_heads(xn @ lp.wq + lp.bq, heads)
    k = split_heads(xn @ lp.wk + lp.bk, heads)
    v = split_heads(xn @ lp.wv + lp.bv, heads)
    return q, k, v


def attention_rows(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Per-head scaled scores softmaxed into row-stochastic attention."""
    dh = q.shape[-1]
    scores = np.matmul(q, k.transpose(0, 2, 1)) / DTYPE(math.sqrt(dh))
    return row_softmax(scores)


def mlp_block(x: np.ndarray, lp: LayerParams, act: str, eps: float) -> np.ndarray:
    xn = layer_norm(x, lp.ln2_gamma, lp.ln2_beta, eps)
    hidden = ACTIVATIONS[act](xn @ lp.fc_w + lp.fc_b)
    return hidden @ lp.proj_w + lp.proj_b


def forward_record(seq: TokenSequence, bundle: WeightsBundle) -> tuple[LastBlockState, np.ndarray]:
    """Run blocks 1..L-1, recording attention, and prepare the final block.

    Returns the pre-final-block token state with the last layer's per-head
    q/k/v, plus the trace of recorded attention with shape
    (L-1, heads, N, N). The pre-transformer layer norm is applied here, so
    ``seq`` is the raw embedded sequence.
    """
    meta = bundle.meta
    if seq.tokens.shape[1] != meta.dim:
        raise ShapeError(
            f"token width {seq.tokens.shape[1]} does not match model dim {meta.dim}"
        )
    x = layer_norm(seq.tokens, bundle.pre_ln_gamma, bundle.pre_ln_beta, meta.eps)

    n = x.shape[0]
    trace = np.empty((meta.layers - 1, meta.heads, n, n), dtype=DTYPE)
    for i in range(meta.layers - 1):
        lp = bundle.layers[i]
        q, k, v = _qkv(x, lp, meta.heads, meta.eps)
        attn = attention_rows(q, k)
        trace[i] = attn
        x = x + (merge_heads(np.matmul(attn, v)) @ lp.wo + lp.bo)
        x = x + mlp_block(x, lp, meta.act, meta.eps)

    q, k, v = _qkv(x, bundle.layers[-1], meta.heads, meta.eps)
    return LastBlockState(tokens_pre=x, q=q, k=k, v=v, grid=seq.grid), trace
