"""Manifest-driven evaluation: confusion accumulation and mIoU."""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .images import load_image, load_label_map
from .pipeline import SurgeryConfig, segment_image
from .weights_io import ClassEmbeddingMatrix, WeightsBundle

log = logging.getLogger(__name__)

THREADS_ENV = "RESCLIP_THREADS"


@dataclass
class ConfusionMatrix:
    counts: np.ndarray
    ignore_index: int = 255

    @classmethod
    def empty(cls, num_classes: int, ignore_index: int = 255) -> "ConfusionMatrix":
        return cls(np.zeros((num_classes, num_classes), dtype=np.int64), ignore_index)

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        self.counts += other.counts
        return self


def accumulate(pred: np.ndarray, gt: np.ndarray, conf: ConfusionMatrix) -> ConfusionMatrix:
    """Add one image's pixels into the matrix as counts[gt, pred].

    Pixels whose ground truth is the ignore index (or otherwise outside
    [0, C)) are skipped.
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValidationError(f"pred shape {pred.shape} != gt shape {gt.shape}")
    c = conf.num_classes
    valid = (gt != conf.ignore_index) & (gt >= 0) & (gt < c)
    g = gt[valid].astype(np.int64)
    p = pred[valid].astype(np.int64)
    conf.counts += np.bincount(g * c + p, minlength=c * c).reshape(c, c)
    return conf


def miou(conf: ConfusionMatrix) -> tuple[list[float | None], float | None]:
    """Per-class IoU (None where the class never appears) and their mean.

    Returns (per_class, None) when no class has any pixels at all.
    """
    counts = conf.counts
    tp = np.diag(counts).astype(np.float64)
    union = counts.sum(axis=0) + counts.sum(axis=1) - tp
    per_class: list[float | None] = [
        float(tp[i] / union[i]) if union[i] > 0 else None for i in range(conf.num_classes)
    ]
    present = [v for v in per_class if v is not None]
    return per_class, (float(np.mean(present)) if present else None)


@dataclass
class Report:
    config: dict
    per_class_iou: dict[str, float | None]
    miou: float | None
    images_evaluated: int
    skipped: list[str] = field(default_factory=list)
    wall_seconds: float = 0.0

    def as_dict(self) -> dict:
        return {
            "config": self.config,
            "per_class_iou": self.per_class_iou,
            "miou": self.miou,
            "images_evaluated": self.images_evaluated,
            "skipped": self.skipped,
            "wall_seconds": self.wall_seconds,
        }


def read_manifest(path) -> list[tuple[str, str]]:
    """Parse one "image_path<TAB>label_path" pair per non-empty line."""
    pairs = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValidationError(f"{path}:{lineno}: expected 'image<TAB>label', got {line!r}")
            pairs.append((parts[0], parts[1]))
    return pairs


def worker_count(requested: int | None = None) -> int:
    """Requested (or CPU-derived) worker count, capped by RESCLIP_THREADS."""
    n = requested if requested else min(os.cpu_count() or 1, 8)
    cap = os.environ.get(THREADS_ENV)
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def run_benchmark(
    manifest_path,
    bundle: WeightsBundle,
    classes: ClassEmbeddingMatrix,
    cfg: SurgeryConfig,
    workers: int | None = None,
) -> Report:
    """Evaluate every manifest pair and report per-class IoU and mIoU.

    Images run in a thread pool with one confusion matrix per image,
    merged by addition at the end, so the result is identical to a
    sequential run. Missing files are skipped with a warning.
    """
    pairs = read_manifest(manifest_path)
    start = time.perf_counter()
    skipped: list[str] = []

    def one(pair: tuple[str, str]) -> ConfusionMatrix | None:
        image_path, label_path = pair
        try:
            image = load_image(image_path)
            gt = load_label_map(label_path)
        except (FileNotFoundError, OSError) as e:
            log.warning("skipping %s: %s", image_path, e)
            return None
        pred, _logits = segment_image(image, bundle, classes, cfg)
        part = ConfusionMatrix.empty(classes.num_classes)
        return accumulate(pred, gt, part)

    results: list[ConfusionMatrix | None]
    n_workers = worker_count(workers)
    if n_workers == 1:
        results = [one(p) for p in pairs]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(one, pairs))

    conf = ConfusionMatrix.empty(classes.num_classes)
    evaluated = 0
    for pair, part in zip(pairs, results):
        if part is None:
            skipped.append(pair[0])
        else:
            conf.merge(part)
            evaluated += 1

    per_class, mean = miou(conf)
    return Report(
        config=cfg.as_dict(),
        per_class_iou={name: iou for name, iou in zip(classes.names, per_class)},
        miou=mean,
        images_evaluated=evaluated,
        skipped=skipped,
        wall_seconds=time.perf_counter() - start,
    )
