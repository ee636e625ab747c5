"""Final-block attention substrate: base-mode scores, the cross-layer
attention average, and the residual cross-correlation blend."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .backbone import LastBlockState
from .errors import ValidationError
from .tensor_ops import DTYPE

MODES = ("vanilla", "sclip", "clearclip", "naclip")


@dataclass
class BaseMode:
    """Which self-correlation variant builds the final block's scores.

    keep_residual / keep_ffn default per mode (clearclip drops both, the
    others keep both); an explicit bool overrides the default.
    """

    kind: str = "naclip"
    keep_residual: bool | None = None
    keep_ffn: bool | None = None
    prior_sigma: float = 5.0

    def __post_init__(self):
        if self.kind not in MODES:
            raise ValidationError(f"unknown base mode '{self.kind}' (expected one of {MODES})")
        if self.kind == "naclip" and self.prior_sigma <= 0:
            raise ValidationError(f"naclip prior_sigma must be > 0, got {self.prior_sigma}")

    def resolved_flags(self) -> tuple[bool, bool]:
        default = self.kind != "clearclip"
        residual = default if self.keep_residual is None else self.keep_residual
        ffn = default if self.keep_ffn is None else self.keep_ffn
        return residual, ffn


@dataclass
class AggregationSpec:
    """Layer range (1-based, inclusive) whose attention gets averaged.

    Both strategies share the same formula; "cla" ranges start at layer 1
    while "swa" slides a fixed-width window (canonically 4 layers).
    """

    strategy: str = "swa"
    start: int = 6
    end: int = 9

    def __post_init__(self):
        if self.strategy not in ("cla", "swa"):
            raise ValidationError(f"unknown aggregation strategy '{self.strategy}'")
        if self.start < 1 or self.end < self.start:
            raise ValidationError(f"bad layer range {self.start}:{self.end}")


def gaussian_neighborhood(h: int, w: int, sigma: float) -> np.ndarray:
    """Distance prior over the patch grid: exp(-||p - q||^2 / (2 sigma^2)).

    Returned as an (1+hw) x (1+hw) matrix whose cls row and column are zero.
    """
    ys, xs = np.divmod(np.arange(h * w), w)
    d2 = (ys[:, None] - ys[None, :]) ** 2 + (xs[:, None] - xs[None, :]) ** 2
    prior = np.exp(-d2 / (2.0 * sigma * sigma)).astype(DTYPE)
    full = np.zeros((1 + h * w, 1 + h * w), dtype=DTYPE)
    full[1:, 1:] = prior
    return full


def scsa_scores(state: LastBlockState, mode: BaseMode) -> np.ndarray:
    """Per-head pre-softmax score matrices for the selected base mode."""
    q, k = state.q, state.k
    scale = DTYPE(1.0 / math.sqrt(q.shape[-1]))
    qq = lambda: np.matmul(q, q.transpose(0, 2, 1)) * scale  # noqa: E731
    kk = lambda: np.matmul(k, k.transpose(0, 2, 1)) * scale  # noqa: E731
    if mode.kind == "vanilla":
        return np.matmul(q, k.transpose(0, 2, 1)) * scale
    if mode.kind == "sclip":
        return qq() + kk()
    if mode.kind == "clearclip":
        return qq()
    h, w = state.grid
    return kk() + gaussian_neighborhood(h, w, mode.prior_sigma)[None, :, :]


def aggregate_cross_correlation(trace: np.ndarray, spec: AggregationSpec) -> np.ndarray:
    """Average the recorded attention over layers start..end, per head."""
    depth = trace.shape[0]
    if spec.end > depth:
        raise ValidationError(
            f"aggregation range {spec.start}:{spec.end} exceeds recorded depth {depth}"
        )
    window = trace[spec.start - 1 : spec.end]
    return (window.sum(axis=0) / DTYPE(window.shape[0])).astype(DTYPE)


def rcs_blend(a_s: np.ndarray, a_c: np.ndarray, lambda_rcs: float) -> np.ndarray:
    """Convex blend of base attention with the cross-layer average."""
    if not 0.0 <= lambda_rcs <= 1.0:
        raise ValidationError(f"lambda_rcs must be in [0, 1], got {lambda_rcs}")
    if lambda_rcs == 0.0:
        return a_s.copy()
    if lambda_rcs == 1.0:
        return a_c.copy()
    lam = DTYPE(lambda_rcs)
    return (DTYPE(1.0) - lam) * a_s + lam * a_c
