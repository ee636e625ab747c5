"""Training-free dense open-vocabulary inference over exported weights."""

from .attention import AggregationSpec, BaseMode, aggregate_cross_correlation, rcs_blend, scsa_scores
from .errors import FormatError, ResclipError, ShapeError, ValidationError
from .evaluation import ConfusionMatrix, Report, accumulate, miou, run_benchmark
from .pipeline import (
    SurgeryConfig,
    attention_snapshot,
    dense_features,
    dense_logits,
    resclip_infer,
    segment_image,
    sliding_window_infer,
)
from .sfr import GaussianSpec, blend_sfr, resclip_attention, sfr_matrix
from .weights_io import (
    ClassEmbeddingMatrix,
    WeightsBundle,
    load_class_embeddings,
    load_weights,
    read_container,
    write_container,
)

__version__ = "0.1.0"

__all__ = [
    "AggregationSpec",
    "BaseMode",
    "ClassEmbeddingMatrix",
    "ConfusionMatrix",
    "FormatError",
    "GaussianSpec",
    "Report",
    "ResclipError",
    "ShapeError",
    "SurgeryConfig",
    "ValidationError",
    "WeightsBundle",
    "accumulate",
    "aggregate_cross_correlation",
    "attention_snapshot",
    "blend_sfr",
    "dense_features",
    "dense_logits",
    "load_class_embeddings",
    "load_weights",
    "miou",
    "rcs_blend",
    "read_container",
    "resclip_attention",
    "resclip_infer",
    "run_benchmark",
    "scsa_scores",
    "segment_image",
    "sfr_matrix",
    "sliding_window_infer",
    "write_container",
    "__version__",
]
