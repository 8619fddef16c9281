from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autograd import Tensor, ops
from ..autograd.nn import Linear, Module
from ..errors import ShapeError


@dataclass
class FilmParams:
    gamma: Tensor  # [B] / [batch, B] per utterance, or [batch, Tm, B] per frame
    beta: Tensor


def film(x: Tensor, params: FilmParams) -> Tensor:
    """``y[t] = gamma * x[t] + beta`` over the time axis of ``x`` (``[Tm, B]`` or ``[batch, Tm, B]``)."""
    gamma, beta = params.gamma, params.beta
    if gamma.shape != beta.shape or gamma.shape[-1] != x.shape[-1]:
        raise ShapeError(f"film: x {x.shape} vs gamma {gamma.shape} / beta {beta.shape}")
    if gamma.ndim == x.ndim - 1 and gamma.ndim >= 2:
        # one (gamma, beta) per sequence: insert the time axis
        shape = gamma.shape[:-1] + (1, gamma.shape[-1])
        gamma, beta = ops.reshape(gamma, shape), ops.reshape(beta, shape)
    return x * gamma + beta


class FilmProjection(Module):
    """Linear maps from an embedding to (gamma, beta), zero-initialised so gamma = 1, beta = 0."""

    def __init__(self, emb_dim: int, channels: int, rng: np.random.Generator):
        self.to_gamma = Linear(emb_dim, channels, rng, init="zeros")
        self.to_beta = Linear(emb_dim, channels, rng, init="zeros")

    def forward(self, embedding: Tensor) -> FilmParams:
        return FilmParams(self.to_gamma(embedding) + 1.0, self.to_beta(embedding))
