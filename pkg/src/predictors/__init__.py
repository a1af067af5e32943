"""Symbol prediction: distance head over embeddings and the induction-head model."""

from .symbol_predictor import (
    Vocab,
    EmbeddingTable,
    PredictionTarget,
    ih_vocab,
    embed,
    distances,
    softmin_rows,
    logits_transform,
    predict,
    cross_entropy,
    accuracy,
    head_forward,
    head_backward,
)
from .sequence_predictor import IHModel

__all__ = [
    "Vocab",
    "EmbeddingTable",
    "PredictionTarget",
    "ih_vocab",
    "embed",
    "distances",
    "softmin_rows",
    "logits_transform",
    "predict",
    "cross_entropy",
    "accuracy",
    "head_forward",
    "head_backward",
    "IHModel",
]
