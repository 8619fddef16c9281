from __future__ import annotations

import numpy as np

from ..autograd import Tensor
from ..autograd.nn import BatchNorm1d, Linear, Module, PReLU
from ..errors import ShapeError
from .base import EnrollmentEmbedding


class Adapter(Module):
    """Optional 1-D batch norm followed by two FC+PReLU layers to a fixed width.

    Keeps the downstream size independent of the embedding dimension. Works
    per vector (``[B, D]``) or per frame (``[B, Te, D]``).
    """

    def __init__(self, in_dim: int, rng: np.random.Generator, bn_enabled: bool = True,
                 hidden: int = 256, out_dim: int = 256):
        self.in_dim, self.out_dim = in_dim, out_dim
        self.bn = BatchNorm1d(in_dim) if bn_enabled else None
        self.fc1 = Linear(in_dim, hidden, rng)
        self.act1 = PReLU()
        self.fc2 = Linear(hidden, out_dim, rng)
        self.act2 = PReLU()

    @classmethod
    def identity(cls, dim: int) -> "Adapter":
        """Square adapter that passes its input through unchanged (BN off)."""
        rng = np.random.default_rng(0)
        ad = cls(dim, rng, bn_enabled=False, hidden=dim, out_dim=dim)
        for fc in (ad.fc1, ad.fc2):
            fc.weight.data = np.eye(dim, dtype=fc.weight.dtype)
            fc.bias.data[:] = 0.0
        for act in (ad.act1, ad.act2):
            act.slope.data[:] = 1.0
        return ad

    def forward(self, x) -> Tensor:
        if isinstance(x, EnrollmentEmbedding):
            x = x.values[None]
        x = x if isinstance(x, Tensor) else Tensor(x, dtype=self.fc1.weight.dtype)
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"adapter expects input dim {self.in_dim}, got {x.shape}")
        if self.bn is not None:
            x = self.bn(x)
        return self.act2(self.fc2(self.act1(self.fc1(x))))
