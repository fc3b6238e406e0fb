"""context-forge: deterministic action-context summarization and evaluation."""

__version__ = "0.1.0"

from .core import (
    ActionContext,
    ActionPair,
    BoundingBox,
    Category,
    ContextForgeError,
    EmbeddingTable,
    FrameRecord,
    ObjectInteraction,
    PosTag,
    Prediction,
    Segment,
    SummarizerConfig,
    TaggedToken,
    ValidationError,
    load_config,
    load_embeddings,
    serialize_config,
)
from .metrics import EvalReport, QualityReport, Variant, context_quality, iou, top5_map

__all__ = [
    "ActionContext",
    "ActionPair",
    "BoundingBox",
    "Category",
    "ContextForgeError",
    "EmbeddingTable",
    "EvalReport",
    "FrameRecord",
    "ObjectInteraction",
    "PosTag",
    "Prediction",
    "QualityReport",
    "Segment",
    "SummarizerConfig",
    "TaggedToken",
    "ValidationError",
    "Variant",
    "context_quality",
    "iou",
    "load_config",
    "load_embeddings",
    "serialize_config",
    "top5_map",
    "__version__",
]
