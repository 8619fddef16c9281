"""Multi-layer frame embeddings merged by a learnable weighted sum.

Stands in for a frozen pretrained network that exposes every layer: the
layers are precomputed and ingested from files, and only the per-layer
logits are trained (jointly with the downstream separator).

Layered file layout (little-endian)::

    magic  4 bytes  b"LYR1"
    L, Te, D        3 x uint32
    values          L*Te*D float32, C order ([layer][frame][dim])
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..autograd import Tensor, no_grad, ops
from ..autograd.nn import Module, Parameter
from ..errors import DataError, InputError
from .base import EnrollmentEmbedding

MAGIC = b"LYR1"


class LayerWeights(Module):
    """Softmax-normalised per-layer weights."""

    def __init__(self, num_layers: int):
        self.layer_logits = Parameter(np.zeros(num_layers))

    def weights(self) -> np.ndarray:
        z = self.layer_logits.data - self.layer_logits.data.max()
        return np.exp(z) / np.exp(z).sum()

    def forward(self, layers, level: str = "frame") -> Tensor:
        """``layers [B, L, Te, D]`` -> ``[B, D]`` (utterance) or ``[B, Te, D]`` (frame)."""
        layers = np.asarray(layers)
        if layers.ndim != 4 or layers.shape[1] != self.layer_logits.shape[0]:
            raise InputError(f"expected [B, {self.layer_logits.shape[0]}, Te, D] layers, got {layers.shape}")
        x = Tensor(layers, dtype=self.layer_logits.dtype)
        if level == "utterance":
            x = ops.mean(x, axis=2)  # [B, L, D]
            w = ops.reshape(ops.softmax(self.layer_logits), (1, -1, 1))
        else:
            w = ops.reshape(ops.softmax(self.layer_logits), (1, -1, 1, 1))
        return ops.sum(x * w, axis=1)


@dataclass
class LayeredFrameSource:
    layers: np.ndarray  # [L, Te, D]
    weights: LayerWeights

    @property
    def layer_logits(self) -> Parameter:
        return self.weights.layer_logits

    @classmethod
    def from_layers(cls, layers) -> "LayeredFrameSource":
        layers = _check_layers(layers)
        return cls(layers, LayerWeights(layers.shape[0]))


def _check_layers(layers) -> np.ndarray:
    if isinstance(layers, (list, tuple)):
        shapes = {np.shape(layer) for layer in layers}
        if len(shapes) != 1:
            raise InputError(f"ragged layer shapes: {sorted(shapes)}")
    arr = np.asarray(layers, dtype=np.float64)
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise InputError(f"layered source needs [L, Te, D] with L, Te, D >= 1, got {arr.shape}")
    return arr


def layered_aggregate(source: LayeredFrameSource, level: str = "utterance") -> EnrollmentEmbedding:
    with no_grad():
        out = source.weights(source.layers[None], level)
    return EnrollmentEmbedding(level, out.data[0].astype(np.float64), "layered")


def write_layered(path, layers) -> None:
    arr = _check_layers(layers)
    header = MAGIC + struct.pack("<3I", *arr.shape)
    Path(path).write_bytes(header + np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_layered(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise DataError(f"{path}: not a layered-embedding file")
    shape = struct.unpack_from("<3I", buf, 4)
    count = int(np.prod(shape))
    if len(buf) != 16 + 4 * count:
        raise DataError(f"{path}: size {len(buf)} does not match header shape {shape}")
    return np.frombuffer(buf, dtype="<f4", offset=16, count=count).reshape(shape).astype(np.float32)


class EmbeddingCache:
    """Directory of per-utterance embedding files keyed by utterance id."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, utt_id: str) -> Path:
        return self.root / (re.sub(r"[^A-Za-z0-9_.-]", "_", utt_id) + ".lyr")

    def __contains__(self, utt_id: str) -> bool:
        return self._path(utt_id).exists()

    def put(self, utt_id: str, layers) -> None:
        write_layered(self._path(utt_id), layers)

    def get(self, utt_id: str) -> np.ndarray:
        return read_layered(self._path(utt_id))


def synthetic_layers(speaker: int, n_frames: int, rng: np.random.Generator, num_layers: int = 4, dim: int = 32,
                     rank: int = 3, noise: tuple[float, ...] | None = None, seed: int = 0) -> np.ndarray:
    """Layers for one utterance of ``speaker``.

    Each speaker owns a random orthonormal ``rank``-dim subspace and a
    centroid inside it, per layer (fixed by ``seed`` and the speaker index).
    Frames scatter around the centroid within the subspace, plus isotropic
    noise whose level differs per layer, so some layers carry more speaker
    information than others.
    """
    if noise is None:
        noise = tuple(np.linspace(0.1, 1.5, num_layers))
    out = np.empty((num_layers, n_frames, dim))
    for layer in range(num_layers):
        basis_rng = np.random.default_rng([seed, speaker, layer])
        q, _ = np.linalg.qr(basis_rng.standard_normal((dim, rank)))
        centroid = 2.0 * basis_rng.standard_normal(rank)
        coeffs = centroid + rng.standard_normal((n_frames, rank))
        out[layer] = coeffs @ q.T + noise[layer] * rng.standard_normal((n_frames, dim)) / np.sqrt(dim)
    return out
