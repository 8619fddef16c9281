"""Enrollment embedders and the adapter that maps them to the conditioning space."""

from .adapter import Adapter
from .base import EnrollmentEmbedding, cosine_score
from .dvector import DVectorConfig, DVectorModel, aam_logits, dvector_forward, dvector_train_step
from .fbank import fbank_embed
from .layered import (EmbeddingCache, LayeredFrameSource, LayerWeights, layered_aggregate, read_layered,
                      synthetic_layers, write_layered)

__all__ = [
    "Adapter", "DVectorConfig", "DVectorModel", "EmbeddingCache", "EnrollmentEmbedding", "LayerWeights",
    "LayeredFrameSource", "aam_logits", "cosine_score", "dvector_forward", "dvector_train_step", "fbank_embed",
    "layered_aggregate", "read_layered", "synthetic_layers", "write_layered",
]
