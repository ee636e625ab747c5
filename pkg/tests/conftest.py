"""Shared fixtures: the committed tiny model and helpers sized to it."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from resclip.attention import AggregationSpec
from resclip.backbone import LastBlockState
from resclip.pipeline import SurgeryConfig
from resclip.weights_io import load_class_embeddings, load_weights, read_container

FIXTURES = Path(__file__).resolve().parent / "fixtures"


@pytest.fixture(scope="session")
def bundle():
    return load_weights(FIXTURES / "tiny.resclip")


@pytest.fixture(scope="session")
def classes():
    return load_class_embeddings(FIXTURES / "tiny_classes.resclip")


@pytest.fixture(scope="session")
def raw_container():
    """(tensors, meta) straight from the container bytes, for oracles."""
    return read_container(FIXTURES / "tiny.resclip")


@pytest.fixture(scope="session")
def goldens():
    return json.loads((FIXTURES / "goldens.json").read_text(encoding="utf-8"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def fixture_path(name: str) -> Path:
    return FIXTURES / name


def tiny_config(**overrides) -> SurgeryConfig:
    """SurgeryConfig scaled to the 2-layer fixture (trace depth 1)."""
    base = dict(
        agg=AggregationSpec("swa", 1, 1),
        window=16,
        stride=8,
        short_side=16,
    )
    base.update(overrides)
    return SurgeryConfig(**base)


def random_state(
    rng: np.random.Generator, heads: int = 2, grid: tuple[int, int] = (4, 4), head_dim: int = 8
) -> LastBlockState:
    """A synthetic final-block state with plausible magnitudes."""
    n = 1 + grid[0] * grid[1]
    shape = (heads, n, head_dim)
    return LastBlockState(
        tokens_pre=rng.normal(0, 1, size=(n, heads * head_dim)).astype(np.float32),
        q=rng.normal(0, 0.5, size=shape).astype(np.float32),
        k=rng.normal(0, 0.5, size=shape).astype(np.float32),
        v=rng.normal(0, 0.5, size=shape).astype(np.float32),
        grid=grid,
    )


def random_trace(
    rng: np.random.Generator, depth: int = 4, heads: int = 2, n: int = 17
) -> np.ndarray:
    """Row-stochastic attention stack shaped like a recorded trace."""
    scores = rng.normal(0, 1, size=(depth, heads, n, n)).astype(np.float32)
    e = np.exp(scores - scores.max(axis=-1, keepdims=True))
    return (e / e.sum(axis=-1, keepdims=True)).astype(np.float32)


def random_map(rng: np.random.Generator, h: int, w: int, num_classes: int) -> np.ndarray:
    """Blobby random segmentation map with at least one class present."""
    m = rng.integers(0, num_classes, size=(h, w)).astype(np.int32)
    # grow a few rectangles so components are not all single cells
    for _ in range(3):
        y0, x0 = rng.integers(0, h), rng.integers(0, w)
        y1, x1 = rng.integers(y0, h) + 1, rng.integers(x0, w) + 1
        m[y0:y1, x0:x1] = rng.integers(0, num_classes)
    return m
