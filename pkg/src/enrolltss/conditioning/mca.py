"""Multi-head cross-attention from mixture frames to enrollment frames.

Per stream: add sinusoidal positions, layer-normalise, project to Q (mixture)
or K/V (enrollment). Heads attend with ``softmax(Q K^T / sqrt(d_head))``
over all enrollment frames (no masking), their outputs are concatenated,
and either one output map (additive mode) or two parallel maps giving
per-frame FiLM (gamma, beta) (film mode) merge them. Output maps start at
zero, so an untrained block changes nothing.
"""

from __future__ import annotations

import numpy as np

from ..autograd import Tensor, ops
from ..autograd.nn import LayerNorm, Linear, Module
from ..errors import ConfigError, InputError, ShapeError
from .film import FilmParams


def sinusoidal_pe(length: int, d: int = 256) -> np.ndarray:
    """``pe[t, 2i] = sin(t / 10000^(2i/d))``, ``pe[t, 2i+1] = cos(...)``."""
    if d % 2:
        raise ConfigError(f"positional encoding width must be even, got {d}")
    t = np.arange(length, dtype=np.float64)[:, None]
    freq = 10000.0 ** (-np.arange(0, d, 2, dtype=np.float64) / d)
    pe = np.empty((length, d))
    pe[:, 0::2] = np.sin(t * freq)
    pe[:, 1::2] = np.cos(t * freq)
    return pe


class McaBlock(Module):
    def __init__(self, query_dim: int, kv_dim: int, rng: np.random.Generator, d_model: int = 256,
                 heads: int = 4, output_mode: str = "additive"):
        if d_model % heads:
            raise ConfigError(f"d_model={d_model} is not divisible by heads={heads}")
        if output_mode not in ("additive", "film"):
            raise ConfigError(f"unknown MCA output mode {output_mode!r}")
        self.query_dim, self.kv_dim = query_dim, kv_dim
        self.d_model, self.heads, self.d_head = d_model, heads, d_model // heads
        self.output_mode = output_mode
        self.norm_q = LayerNorm(query_dim)
        self.norm_kv = LayerNorm(kv_dim)
        self.w_q = Linear(query_dim, d_model, rng)
        self.w_k = Linear(kv_dim, d_model, rng)
        self.w_v = Linear(kv_dim, d_model, rng)
        if output_mode == "additive":
            self.out = Linear(d_model, query_dim, rng, init="zeros")
        else:
            self.out_gamma = Linear(d_model, query_dim, rng, init="zeros")
            self.out_beta = Linear(d_model, query_dim, rng, init="zeros")
        self.last_attention: np.ndarray | None = None  # [batch, heads, Tm, Te]

    def _split(self, x: Tensor) -> Tensor:
        b, t, _ = x.shape
        return ops.transpose(ops.reshape(x, (b, t, self.heads, self.d_head)), (0, 2, 1, 3))

    def attend(self, mixture: Tensor, enroll: Tensor, enroll_positions=None) -> Tensor:
        """Concatenated head outputs ``[batch, Tm, d_model]``.

        ``enroll_positions`` overrides the frame indices used for the
        enrollment positional encoding (default ``0..Te-1``).
        """
        if mixture.ndim != 3 or enroll.ndim != 3 or mixture.shape[0] != enroll.shape[0]:
            raise ShapeError(f"MCA expects [batch, T, D] inputs, got {mixture.shape} and {enroll.shape}")
        if mixture.shape[-1] != self.query_dim or enroll.shape[-1] != self.kv_dim:
            raise ShapeError(f"MCA dims: mixture {mixture.shape} (want {self.query_dim}), "
                             f"enrollment {enroll.shape} (want {self.kv_dim})")
        bsz, tm, _ = mixture.shape
        te = enroll.shape[1]
        if te == 0:
            raise InputError("MCA got an empty enrollment (Te = 0)")
        pe_k = sinusoidal_pe(te if enroll_positions is None else int(np.max(enroll_positions)) + 1, self.kv_dim)
        if enroll_positions is not None:
            pe_k = pe_k[np.asarray(enroll_positions)]
        q_in = self.norm_q(mixture + sinusoidal_pe(tm, self.query_dim).astype(mixture.dtype))
        kv_in = self.norm_kv(enroll + pe_k.astype(enroll.dtype))
        q = self._split(self.w_q(q_in))
        k = self._split(self.w_k(kv_in))
        v = self._split(self.w_v(kv_in))
        scores = (q @ ops.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(self.d_head))
        attn = ops.softmax(scores, axis=-1)
        self.last_attention = attn.data
        ctx = ops.transpose(attn @ v, (0, 2, 1, 3))
        return ops.reshape(ctx, (bsz, tm, self.d_model))

    def forward(self, mixture: Tensor, enroll: Tensor, enroll_positions=None):
        """Additive mode: the residual to add to ``mixture``. Film mode: per-frame FilmParams."""
        ctx = self.attend(mixture, enroll, enroll_positions)
        if self.output_mode == "additive":
            return self.out(ctx)
        return FilmParams(self.out_gamma(ctx) + 1.0, self.out_beta(ctx))
