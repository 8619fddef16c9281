"""LSTM d-vector speaker embedder with cross-entropy or AAM-softmax training."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .. import dsp
from ..autograd import Tensor, no_grad, ops
from ..autograd.nn import LSTM, Linear, Module
from ..autograd.optim import clip_grad_norm
from ..errors import ConfigError, TrainingError
from .base import EnrollmentEmbedding


@dataclass
class DVectorConfig:
    n_speakers: int
    hidden: int = 64  # 768 at full scale
    num_layers: int = 3
    emb_dim: int = 256
    n_mels: int = 80
    objective: str = "cross_entropy"  # or "aam_softmax"
    margin: float = 0.2
    scale: float = 30.0
    fn_enabled: bool = False

    def __post_init__(self):
        if self.objective not in ("cross_entropy", "aam_softmax"):
            raise ConfigError(f"unknown d-vector objective {self.objective!r}")

    def to_dict(self) -> dict:
        return asdict(self)


class DVectorModel(Module):
    def __init__(self, config: DVectorConfig, rng: np.random.Generator):
        self.config = config
        self.lstm = LSTM(config.n_mels, config.hidden, config.num_layers, rng)
        self.projection = Linear(config.hidden, config.emb_dim, rng)
        # train-only head; never on the embedding path
        self.classifier = Linear(config.emb_dim, config.n_speakers, rng, init="zeros")
        self.classifier.weight.data += rng.normal(0.0, 0.01, self.classifier.weight.shape)

    def forward(self, features, level: str = "utterance") -> Tensor:
        """Embed ``[B, T, n_mels]`` features; unit-norm ``[B, E]`` or ``[B, T, E]``."""
        shape = features.shape if isinstance(features, Tensor) else np.shape(features)
        if len(shape) != 3 or shape[-1] != self.config.n_mels:
            raise ConfigError(f"d-vector expects [B, T, {self.config.n_mels}] features, got {shape}")
        if isinstance(features, Tensor):
            x = features - ops.mean(features, axis=1, keepdims=True) if self.config.fn_enabled else features
        else:
            # FN in float64 before the cast keeps the per-band offset invariance exact
            feats = np.asarray(features, dtype=np.float64)
            if self.config.fn_enabled:
                feats = feats - feats.mean(axis=1, keepdims=True)
            x = Tensor(feats, dtype=self.projection.weight.dtype)
        hs = self.lstm(x)
        if level == "frame":
            return ops.l2_normalize(self.projection(hs), axis=-1)
        return ops.l2_normalize(self.projection(hs[:, -1]), axis=-1)

    def logits(self, embeddings: Tensor, labels) -> Tensor:
        cfg = self.config
        if cfg.objective == "cross_entropy":
            return self.classifier(embeddings)
        return aam_logits(embeddings, self.classifier.weight, labels, cfg.margin, cfg.scale)

    def loss(self, features, labels) -> Tensor:
        emb = self.forward(features, "utterance")
        return ops.cross_entropy(self.logits(emb, labels), labels)


def aam_logits(embeddings: Tensor, class_weight: Tensor, labels, margin: float, scale: float) -> Tensor:
    """Additive angular margin logits.

    Cosines between unit embeddings and unit class vectors; the target class
    cosine ``cos(t)`` becomes ``cos(t + margin)``; everything is scaled.
    """
    labels = np.asarray(labels, dtype=np.int64)
    w = ops.l2_normalize(class_weight, axis=0)
    cos = ops.l2_normalize(embeddings, axis=-1) @ w
    sin = ops.sqrt(ops.clamp_min(1.0 - cos * cos, 1e-12))
    phi = cos * math.cos(margin) - sin * math.sin(margin)
    onehot = np.zeros(cos.shape, dtype=cos.dtype)
    onehot[np.arange(len(labels)), labels] = 1.0
    return (phi * onehot + cos * (1.0 - onehot)) * scale


def dvector_forward(model: DVectorModel, features, level: str = "utterance") -> EnrollmentEmbedding:
    """Embed one utterance's features (FN applied inside the model when enabled)."""
    values = features.values if isinstance(features, dsp.FeatureMatrix) else np.asarray(features)
    if values.ndim != 2 or values.shape[1] != model.config.n_mels:
        raise ConfigError(f"d-vector expects [T x {model.config.n_mels}] features, got {values.shape}")
    with no_grad():
        out = model.forward(values[None], level)
    return EnrollmentEmbedding(level, out.data[0].astype(np.float64), "dvector", normalized=True)


def dvector_train_step(model: DVectorModel, batch, optimizer, max_grad_norm: float = 5.0) -> float:
    """One optimiser step on ``batch = (features [B, T, n_mels], speaker_ids [B])``."""
    features, labels = batch
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ConfigError("empty training batch")
    if labels.min() < 0 or labels.max() >= model.config.n_speakers:
        raise ConfigError(f"speaker ids must lie in [0, {model.config.n_speakers}), got {labels.min()}..{labels.max()}")
    optimizer.zero_grad()
    loss = model.loss(features, labels)
    value = loss.item()
    if not math.isfinite(value):
        feats = np.asarray(features)
        raise TrainingError(f"non-finite d-vector loss {value}; batch of {len(labels)} utterances, "
                            f"feature range [{feats.min():.3g}, {feats.max():.3g}], labels {labels.tolist()}")
    loss.backward()
    clip_grad_norm(optimizer.params, max_grad_norm)
    optimizer.step()
    return value
