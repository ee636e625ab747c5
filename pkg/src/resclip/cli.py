"""Command-line front end: segment, eval, attn-dump, compare-modes."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .attention import MODES, AggregationSpec, BaseMode
from .errors import ResclipError
from .evaluation import run_benchmark
from .images import load_image, save_colorized_png, save_index_png
from .pipeline import (
    SurgeryConfig,
    attention_snapshot,
    center_crop,
    normalize_image,
    resize_short_side,
    segment_image,
)
from .reporting import save_heatmap, write_comparison, write_report
from .sfr import GaussianSpec
from .weights_io import load_class_embeddings, load_weights

log = logging.getLogger(__name__)

_D = SurgeryConfig()


def _bool_flag(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def _layer_range(text: str) -> tuple[int, int]:
    parts = text.split(":")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected START:END, got {text!r}")
    try:
        start, end = int(parts[0]), int(parts[1])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers in START:END, got {text!r}")
    return start, end


def _range_list(text: str) -> list[tuple[int, int]]:
    return [_layer_range(part) for part in text.split(",") if part]


def _add_model_flags(p: argparse.ArgumentParser, classes_required: bool = True) -> None:
    p.add_argument("--weights", required=True, help="model container path")
    p.add_argument("--classes", required=classes_required, help="class embedding container path")


def _add_surgery_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=MODES, default="naclip", help="base attention mode")
    p.add_argument("--lambda-rcs", type=float, default=_D.lambda_rcs, metavar="F")
    p.add_argument("--lambda-sfr", type=float, default=_D.lambda_sfr, metavar="F")
    p.add_argument("--agg", choices=("cla", "swa"), default=_D.agg.strategy)
    p.add_argument(
        "--layers",
        type=_layer_range,
        default=None,
        metavar="S:E",
        help="1-based inclusive aggregation range (default 6:9 for swa, 1:9 for cla)",
    )
    p.add_argument("--gauss-size", type=int, default=_D.gaussian.size, metavar="K")
    p.add_argument("--gauss-sigma", type=float, default=_D.gaussian.sigma, metavar="F")
    p.add_argument("--gauss-2d", action="store_true", help="smooth over the patch grid, not the flat axis")
    p.add_argument("--gain", type=float, default=_D.gain, metavar="F")
    p.add_argument("--passes", type=int, default=_D.feedback_passes, metavar="N")
    p.add_argument("--window", type=int, default=_D.window, metavar="PX")
    p.add_argument("--stride", type=int, default=_D.stride, metavar="PX")
    p.add_argument("--short-side", type=int, default=_D.short_side, metavar="PX")
    p.add_argument("--head-avg", action="store_true", help="average the aggregated map over heads")
    p.add_argument("--keep-residual", type=_bool_flag, default=None, metavar="BOOL")
    p.add_argument("--keep-ffn", type=_bool_flag, default=None, metavar="BOOL")
    p.add_argument("--prior-sigma", type=float, default=5.0, metavar="F", help="spatial prior width (naclip)")
    p.add_argument("--connectivity", type=int, choices=(4, 8), default=_D.connectivity)


def config_from_args(args: argparse.Namespace) -> SurgeryConfig:
    if args.layers is not None:
        start, end = args.layers
    else:
        start, end = (1, 9) if args.agg == "cla" else (6, 9)
    return SurgeryConfig(
        mode=BaseMode(
            kind=args.mode,
            keep_residual=args.keep_residual,
            keep_ffn=args.keep_ffn,
            prior_sigma=args.prior_sigma,
        ),
        lambda_rcs=args.lambda_rcs,
        lambda_sfr=args.lambda_sfr,
        agg=AggregationSpec(strategy=args.agg, start=start, end=end),
        gaussian=GaussianSpec(size=args.gauss_size, sigma=args.gauss_sigma, two_dim=args.gauss_2d),
        gain=args.gain,
        feedback_passes=args.passes,
        window=args.window,
        stride=args.stride,
        short_side=args.short_side,
        head_avg=args.head_avg,
        connectivity=args.connectivity,
    )


def cmd_segment(args: argparse.Namespace) -> int:
    cfg = config_from_args(args)
    bundle = load_weights(args.weights)
    classes = load_class_embeddings(args.classes)
    image = load_image(args.image)
    seg, _logits = segment_image(image, bundle, classes, cfg)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.image).stem
    index_path = out / f"{stem}_seg.png"
    color_path = out / f"{stem}_color.png"
    save_index_png(seg, index_path)
    save_colorized_png(seg, color_path, num_classes=classes.num_classes)

    present, counts = np.unique(seg, return_counts=True)
    summary = {
        "config": cfg.as_dict(),
        "image": str(args.image),
        "shape": list(seg.shape),
        "pixels_per_class": {classes.names[i]: int(n) for i, n in zip(present, counts)},
    }
    (out / f"{stem}_segment.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {index_path}")
    print(f"wrote {color_path}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = config_from_args(args)
    bundle = load_weights(args.weights)
    classes = load_class_embeddings(args.classes)
    report = run_benchmark(args.manifest, bundle, classes, cfg, workers=args.workers)
    paths = write_report(report, args.out)
    miou_text = f"{report.miou:.4f}" if report.miou is not None else "nan"
    print(f"mIoU {miou_text} over {report.images_evaluated} images ({len(report.skipped)} skipped)")
    for kind, path in paths.items():
        print(f"wrote {path} ({kind})")
    return 0


def cmd_attn_dump(args: argparse.Namespace) -> int:
    cfg = config_from_args(args)
    bundle = load_weights(args.weights)
    classes = load_class_embeddings(args.classes)

    image = load_image(args.image)
    target = max(cfg.short_side, cfg.window)
    window = center_crop(resize_short_side(image, target), cfg.window)
    snap = attention_snapshot(normalize_image(window, bundle), bundle, classes, cfg)
    h, w = snap["grid"]

    row = args.row if args.row is not None else h // 2
    col = args.col if args.col is not None else w // 2
    if not (0 <= row < h and 0 <= col < w):
        raise ResclipError(f"patch ({row}, {col}) outside grid {h}x{w}")
    token = 1 + row * w + col

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["map\trow_sum\tmin\tmax"]

    def dump(name: str, matrix: np.ndarray) -> None:
        # per-head maps collapse to head means unless --per-head asks otherwise
        if matrix.ndim == 3 and not args.per_head:
            matrix = matrix.mean(axis=0)
        if matrix.ndim == 2:
            matrix = matrix[None]
        for j in range(matrix.shape[0]):
            vec = matrix[j, token, 1:]
            suffix = f"_h{j}" if matrix.shape[0] > 1 else ""
            save_heatmap(vec.reshape(h, w), out / f"{name}{suffix}.png", f"{name}{suffix} row {token}")
            full_row = matrix[j, token]
            lines.append(
                f"{name}{suffix}\t{full_row.sum():.6f}\t{full_row.min():.6f}\t{full_row.max():.6f}"
            )

    trace = snap["trace"]
    for i in range(trace.shape[0]):
        dump(f"layer{i + 1:02d}", trace[i])
    for name in ("base", "aggregated", "blended", "final"):
        dump(name, snap[name])
    save_colorized_png(snap["seg"], out / "firstpass_seg.png", num_classes=classes.num_classes)

    table = "\n".join(lines) + "\n"
    (out / "attn_rows.tsv").write_text(table, encoding="utf-8")
    print(f"patch ({row}, {col}), token {token}, grid {h}x{w}")
    print(table, end="")
    print(f"wrote {out}/attn_rows.tsv and {len(list(out.glob('*.png')))} figures")
    return 0


def cmd_compare_modes(args: argparse.Namespace) -> int:
    cfg = config_from_args(args)
    bundle = load_weights(args.weights)
    classes = load_class_embeddings(args.classes)

    variants = {
        "base": dataclasses.replace(cfg, lambda_rcs=0.0, feedback_passes=0),
        "rcs": dataclasses.replace(cfg, feedback_passes=0),
        "sfr": dataclasses.replace(cfg, lambda_rcs=0.0, feedback_passes=max(1, cfg.feedback_passes)),
        "full": dataclasses.replace(cfg, feedback_passes=max(1, cfg.feedback_passes)),
    }
    rows = {}
    for name, variant in variants.items():
        rows[name] = run_benchmark(args.manifest, bundle, classes, variant, workers=args.workers)
        miou_text = f"{rows[name].miou:.4f}" if rows[name].miou is not None else "nan"
        print(f"{name}: mIoU {miou_text}")
    paths = write_comparison(rows, args.out)

    if args.ranges:
        sweep = {}
        for start, end in args.ranges:
            spec = AggregationSpec(strategy=cfg.agg.strategy, start=start, end=end)
            variant = dataclasses.replace(
                cfg, agg=spec, feedback_passes=max(1, cfg.feedback_passes)
            )
            key = f"layers_{start}_{end}"
            sweep[key] = run_benchmark(args.manifest, bundle, classes, variant, workers=args.workers)
            miou_text = f"{sweep[key].miou:.4f}" if sweep[key].miou is not None else "nan"
            print(f"{key}: mIoU {miou_text}")
        paths.update(write_comparison(sweep, args.out, stem="sweep"))

    for kind, path in paths.items():
        print(f"wrote {path} ({kind})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="resclip", description="training-free dense inference over exported weights")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", help="segment one image")
    _add_model_flags(p)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="output directory")
    _add_surgery_flags(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("eval", help="evaluate a manifest of image/label pairs")
    _add_model_flags(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=None)
    _add_surgery_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("attn-dump", help="dump attention maps for one window")
    _add_model_flags(p)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--row", type=int, default=None, help="query patch row (default center)")
    p.add_argument("--col", type=int, default=None, help="query patch column (default center)")
    p.add_argument("--per-head", action="store_true", help="one figure per head for surgery maps")
    _add_surgery_flags(p)
    p.set_defaults(func=cmd_attn_dump)

    p = sub.add_parser("compare-modes", help="benchmark base / blend / refine / full variants")
    _add_model_flags(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--ranges", type=_range_list, default=None, metavar="S:E,S:E,...")
    _add_surgery_flags(p)
    p.set_defaults(func=cmd_compare_modes)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ResclipError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
