"""Confusion accumulation, mIoU, and the benchmark runner."""

import json

import numpy as np
import pytest

import oracles
from resclip.errors import ValidationError
from resclip.evaluation import (
    ConfusionMatrix,
    Report,
    accumulate,
    miou,
    read_manifest,
    run_benchmark,
    worker_count,
)

from conftest import fixture_path, tiny_config


def test_accumulate_matches_loop_oracle(rng):
    conf = ConfusionMatrix.empty(4)
    pred = rng.integers(0, 4, size=(13, 9)).astype(np.int32)
    gt = rng.integers(0, 4, size=(13, 9)).astype(np.int32)
    gt[0, :3] = 255
    gt[1, 0] = 7  # out of range counts as ignored
    accumulate(pred, gt, conf)
    np.testing.assert_array_equal(conf.counts, oracles.confusion_ref(pred, gt, 4))
    assert conf.counts.sum() == ((gt != 255) & (gt < 4)).sum()


def test_accumulate_order_independent(rng):
    a_pred = rng.integers(0, 3, size=(5, 5)).astype(np.int32)
    a_gt = rng.integers(0, 3, size=(5, 5)).astype(np.int32)
    b_pred = rng.integers(0, 3, size=(7, 4)).astype(np.int32)
    b_gt = rng.integers(0, 3, size=(7, 4)).astype(np.int32)

    ab = ConfusionMatrix.empty(3)
    accumulate(a_pred, a_gt, ab)
    accumulate(b_pred, b_gt, ab)
    ba = ConfusionMatrix.empty(3)
    accumulate(b_pred, b_gt, ba)
    accumulate(a_pred, a_gt, ba)
    assert np.array_equal(ab.counts, ba.counts)


def test_accumulate_shape_mismatch():
    conf = ConfusionMatrix.empty(2)
    with pytest.raises(ValidationError):
        accumulate(np.zeros((2, 2), np.int32), np.zeros((3, 2), np.int32), conf)


def test_miou_matches_oracle(rng):
    conf = ConfusionMatrix.empty(5)
    pred = rng.integers(0, 5, size=400).astype(np.int32)
    gt = rng.integers(0, 5, size=400).astype(np.int32)
    accumulate(pred.reshape(20, 20), gt.reshape(20, 20), conf)
    per, mean = miou(conf)
    per_ref, mean_ref = oracles.iou_ref(conf.counts)
    assert per == pytest.approx(per_ref)
    assert mean == pytest.approx(mean_ref)


def test_miou_excludes_absent_classes():
    conf = ConfusionMatrix.empty(3)
    pred = np.array([[0, 0], [1, 1]], np.int32)
    gt = np.array([[0, 1], [1, 1]], np.int32)
    accumulate(pred, gt, conf)
    per, mean = miou(conf)
    assert per[2] is None
    assert mean == pytest.approx((per[0] + per[1]) / 2)


def test_miou_no_data():
    per, mean = miou(ConfusionMatrix.empty(4))
    assert per == [None] * 4 and mean is None


def test_read_manifest(tmp_path):
    p = tmp_path / "m.tsv"
    p.write_text("a.png\tb.png\n\nc.png\td.png\n", encoding="utf-8")
    assert read_manifest(p) == [("a.png", "b.png"), ("c.png", "d.png")]
    p.write_text("only_one_column\n", encoding="utf-8")
    with pytest.raises(ValidationError):
        read_manifest(p)


def test_worker_count_env_cap(monkeypatch):
    monkeypatch.delenv("RESCLIP_THREADS", raising=False)
    assert worker_count(3) == 3
    monkeypatch.setenv("RESCLIP_THREADS", "2")
    assert worker_count(6) == 2
    assert worker_count(1) == 1
    monkeypatch.setenv("RESCLIP_THREADS", "0")
    assert worker_count(5) == 1


def _manifest(tmp_path, pairs):
    p = tmp_path / "manifest.tsv"
    p.write_text("".join(f"{a}\t{b}\n" for a, b in pairs), encoding="utf-8")
    return p


def _fixture_pairs():
    return [
        (str(fixture_path("tiny_image.png")), str(fixture_path("tiny_label.png"))),
        (str(fixture_path("tiny_image2.png")), str(fixture_path("tiny_label2.png"))),
    ]


def test_run_benchmark_report_contract(tmp_path, bundle, classes):
    manifest = _manifest(tmp_path, _fixture_pairs())
    report = run_benchmark(manifest, bundle, classes, tiny_config(), workers=1)
    assert report.images_evaluated == 2
    assert report.skipped == []
    assert set(report.per_class_iou) == set(classes.names)
    assert report.wall_seconds > 0
    payload = report.as_dict()
    assert list(payload) == [
        "config",
        "per_class_iou",
        "miou",
        "images_evaluated",
        "skipped",
        "wall_seconds",
    ]
    json.dumps(payload)  # must be serializable as-is


def test_run_benchmark_shuffle_invariant(tmp_path, bundle, classes):
    pairs = _fixture_pairs()
    fwd = run_benchmark(_manifest(tmp_path, pairs), bundle, classes, tiny_config(), workers=1)
    rev = run_benchmark(_manifest(tmp_path, pairs[::-1]), bundle, classes, tiny_config(), workers=1)
    assert fwd.miou == rev.miou
    assert fwd.per_class_iou == rev.per_class_iou


def test_run_benchmark_parallel_equals_sequential(tmp_path, bundle, classes):
    pairs = _fixture_pairs() * 2
    manifest = _manifest(tmp_path, pairs)
    seq = run_benchmark(manifest, bundle, classes, tiny_config(), workers=1)
    par = run_benchmark(manifest, bundle, classes, tiny_config(), workers=3)
    assert seq.miou == par.miou
    assert seq.per_class_iou == par.per_class_iou
    assert par.images_evaluated == 4


def test_run_benchmark_skips_missing(tmp_path, bundle, classes):
    pairs = _fixture_pairs() + [("/nonexistent/img.png", "/nonexistent/lab.png")]
    report = run_benchmark(_manifest(tmp_path, pairs), bundle, classes, tiny_config(), workers=2)
    assert report.images_evaluated == 2
    assert report.skipped == ["/nonexistent/img.png"]
