from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateNormError


@dataclass
class EnrollmentEmbedding:
    """Conditioning signal: an utterance vector ``[D]`` or a frame sequence ``[Te, D]``."""

    kind: str  # "utterance" | "frame"
    values: np.ndarray
    source: str  # "fbank" | "dvector" | "layered"
    normalized: bool = False

    def __post_init__(self):
        if self.kind not in ("utterance", "frame"):
            raise ValueError(f"kind must be 'utterance' or 'frame', got {self.kind!r}")
        want = 1 if self.kind == "utterance" else 2
        if self.values.ndim != want:
            raise ValueError(f"{self.kind} embedding needs {want}-D values, got shape {self.values.shape}")

    @property
    def dim(self) -> int:
        return self.values.shape[-1]


def cosine_score(a, b) -> float:
    """Cosine similarity ``a.b / (|a||b|)`` in [-1, 1]."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateNormError("cosine score of a zero vector is undefined")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))
