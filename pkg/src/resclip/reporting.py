"""Report serialization (JSON + TSV) and matplotlib figure rendering."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import Report


def _fmt(v) -> str:
    if v is None:
        return "nan"
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def report_tsv(report: Report) -> str:
    """Tab-delimited per-class table with a trailing mIoU row."""
    lines = ["class\tiou"]
    for name, iou in report.per_class_iou.items():
        lines.append(f"{name}\t{_fmt(iou)}")
    lines.append(f"mIoU\t{_fmt(report.miou)}")
    return "\n".join(lines) + "\n"


def write_report(report: Report, out_dir, stem: str = "report") -> dict[str, Path]:
    """Write {stem}.json, {stem}.tsv, and a per-class IoU bar figure.

    Returns the paths written, keyed by kind.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "json": out / f"{stem}.json",
        "tsv": out / f"{stem}.tsv",
        "figure": out / f"{stem}_iou.png",
    }
    paths["json"].write_text(json.dumps(report.as_dict(), indent=2) + "\n", encoding="utf-8")
    paths["tsv"].write_text(report_tsv(report), encoding="utf-8")
    render_iou_bars(report, paths["figure"])
    return paths


def render_iou_bars(report: Report, path) -> None:
    names = list(report.per_class_iou.keys())
    values = [v if v is not None else 0.0 for v in report.per_class_iou.values()]
    height = max(2.5, 0.3 * len(names) + 1.2)
    fig, ax = plt.subplots(figsize=(8, height))
    ax.barh(range(len(names)), values, color="#3b7ea1")
    ax.set_yticks(range(len(names)))
    ax.set_yticklabels(names, fontsize=8)
    ax.invert_yaxis()
    ax.set_xlim(0.0, 1.0)
    ax.set_xlabel("IoU")
    title = "per-class IoU"
    if report.miou is not None:
        title += f" (mIoU {report.miou:.4f})"
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def comparison_tsv(rows: dict[str, Report]) -> str:
    """Tab-delimited mIoU per configuration."""
    lines = ["config\tmiou"]
    for name, report in rows.items():
        lines.append(f"{name}\t{_fmt(report.miou)}")
    return "\n".join(lines) + "\n"


def write_comparison(rows: dict[str, Report], out_dir, stem: str = "comparison") -> dict[str, Path]:
    """Write a multi-configuration summary: JSON, TSV, and a bar figure."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "json": out / f"{stem}.json",
        "tsv": out / f"{stem}.tsv",
        "figure": out / f"{stem}.png",
    }
    payload = {name: report.as_dict() for name, report in rows.items()}
    paths["json"].write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    paths["tsv"].write_text(comparison_tsv(rows), encoding="utf-8")

    names = list(rows.keys())
    values = [rows[n].miou if rows[n].miou is not None else 0.0 for n in names]
    fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(names) + 1.5), 4.0))
    bars = ax.bar(range(len(names)), values, color="#3b7ea1")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("mIoU")
    ax.set_ylim(0.0, 1.0)
    for bar, v in zip(bars, values):
        ax.text(bar.get_x() + bar.get_width() / 2, v + 0.01, f"{v:.3f}", ha="center", fontsize=8)
    ax.set_title(stem)
    fig.tight_layout()
    fig.savefig(paths["figure"], dpi=120)
    plt.close(fig)
    return paths


def save_heatmap(values: np.ndarray, path, title: str = "") -> None:
    """Render a 2-D array as a viridis heatmap with a colorbar."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"heatmap expects a 2-D array, got shape {arr.shape}")
    fig, ax = plt.subplots(figsize=(4.5, 4.0))
    im = ax.imshow(arr, cmap="viridis", interpolation="nearest")
    fig.colorbar(im, ax=ax, fraction=0.046)
    if title:
        ax.set_title(title, fontsize=9)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
