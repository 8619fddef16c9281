"""Waveform separators: an E3Net-style LSTM model and a Conv-TasNet-style TCN.

Inputs are ``[batch, n]`` waveforms; the conditioning input is the adapted
enrollment, ``[batch, 256]`` (utterance) or ``[batch, Te, 256]`` (frame).
Mixtures are zero-padded so the encoder frames cover every sample and the
output is trimmed back to the input length.
"""

from __future__ import annotations

import math

import numpy as np

from ..autograd import Tensor, no_grad, ops
from ..autograd.nn import LSTM, LayerNorm, Linear, Module, Parameter, PReLU
from ..conditioning import FilmProjection, McaBlock, concat_condition, film
from ..embedders.adapter import Adapter
from ..embedders.base import EnrollmentEmbedding
from ..errors import ContractError, InputError, ShapeError
from .config import SeparatorConfig
from .upstream import FbankUpstream, Upstream


class WaveEncoder(Module):
    """Learned framing transform: frames of ``L`` samples, hop ``S``, projected to ``N`` (no bias)."""

    def __init__(self, frame: int, hop: int, dim: int, rng: np.random.Generator):
        self.frame, self.hop = frame, hop
        self.weight = Parameter(rng.standard_normal((frame, dim)) * np.sqrt(2.0 / frame))

    def padded_length(self, n: int) -> int:
        if n < self.frame:
            return self.frame
        return self.frame + math.ceil((n - self.frame) / self.hop) * self.hop

    def forward(self, wave: Tensor) -> Tensor:
        if wave.shape[-1] < self.frame:
            raise InputError(f"waveform of {wave.shape[-1]} samples is shorter than one {self.frame}-sample frame")
        return ops.frame_signal(wave, self.frame, self.hop) @ self.weight


class WaveDecoder(Module):
    """Transposed encoder: latent frames back to samples, then overlap-add."""

    def __init__(self, frame: int, hop: int, dim: int, rng: np.random.Generator):
        self.frame, self.hop = frame, hop
        self.weight = Parameter(rng.standard_normal((dim, frame)) * np.sqrt(1.0 / dim) * hop / frame)

    def forward(self, latent: Tensor, length: int | None = None) -> Tensor:
        return ops.overlap_add(latent @ self.weight, self.hop, length)


class E3Net(Module):
    def __init__(self, cfg: SeparatorConfig, rng: np.random.Generator):
        self.cfg = cfg
        n, b, c = cfg.N, cfg.B, cfg.cond_dim
        self.encoder = WaveEncoder(cfg.frame_samples, cfg.hop_samples, n, rng)
        self.enc_norm = LayerNorm(n)
        self.bottleneck = Linear(n + c if cfg.conditioning == "concat" else n, b, rng)
        self.bottleneck_act = PReLU()
        if cfg.conditioning == "film_utt":
            self.film = FilmProjection(c, b, rng)
        elif cfg.conditioning.startswith("mca"):
            mode = "additive" if cfg.conditioning == "mca_additive" else "film"
            self.mca = McaBlock(b, c, rng, d_model=cfg.mca_d_model, heads=cfg.mca_heads, output_mode=mode)
        hidden = max(1, int(round(b * cfg.width_multiplier)))
        self.lstm = LSTM(b, hidden, cfg.R, rng)
        self.head = Linear(hidden, n, rng)
        self.decoder = WaveDecoder(cfg.frame_samples, cfg.hop_samples, n, rng)

    def forward(self, wave: Tensor, cond: Tensor | None) -> Tensor:
        enc = self.encoder(wave)
        h = self.enc_norm(enc)
        if self.cfg.conditioning == "concat":
            h = concat_condition(h, cond if cond is not None else Tensor(np.zeros((h.shape[0], self.cfg.cond_dim))))
        h = self.bottleneck_act(self.bottleneck(h))
        if cond is not None:
            if self.cfg.conditioning == "film_utt":
                h = film(h, self.film(cond))
            elif self.cfg.conditioning == "mca_additive":
                h = h + self.mca(h, cond)
            elif self.cfg.conditioning == "mca_film":
                h = film(h, self.mca(h, cond))
        out = self.head(self.lstm(h))
        latent = out if self.cfg.output_head == "direct" else enc * ops.sigmoid(out)
        return self.decoder(latent, wave.shape[-1])


class TcnBlock(Module):
    def __init__(self, channels: int, hidden: int, kernel: int, dilation: int, rng: np.random.Generator,
                 film_dim: int | None):
        self.dilation, self.kernel = dilation, kernel
        self.film = FilmProjection(film_dim, channels, rng) if film_dim else None
        self.inp = Linear(channels, hidden, rng)
        self.act1 = PReLU()
        self.norm1 = LayerNorm(hidden)
        self.dconv = Parameter(rng.standard_normal((kernel, hidden)) / np.sqrt(kernel))
        self.act2 = PReLU()
        self.norm2 = LayerNorm(hidden)
        self.out = Linear(hidden, channels, rng)

    def forward(self, x: Tensor, cond: Tensor | None) -> Tensor:
        y = film(x, self.film(cond)) if (self.film is not None and cond is not None) else x
        y = self.norm1(self.act1(self.inp(y)))
        pad = self.dilation * (self.kernel - 1) // 2
        y = self.norm2(self.act2(ops.depthwise_conv1d(y, self.dconv, self.dilation, pad)))
        return x + self.out(y)


class ConvTasNet(Module):
    def __init__(self, cfg: SeparatorConfig, rng: np.random.Generator):
        if cfg.kernel % 2 == 0:
            raise ShapeError(f"TCN kernel must be odd for same padding, got {cfg.kernel}")
        self.cfg = cfg
        n, b, c = cfg.N, cfg.B, cfg.cond_dim
        hidden = cfg.hidden or 2 * b
        self.encoder = WaveEncoder(cfg.frame_samples, cfg.hop_samples, n, rng)
        self.enc_norm = LayerNorm(n)
        self.bottleneck = Linear(n + c if cfg.conditioning == "concat" else n, b, rng)
        if cfg.conditioning.startswith("mca"):
            mode = "additive" if cfg.conditioning == "mca_additive" else "film"
            self.mca = McaBlock(b, c, rng, d_model=cfg.mca_d_model, heads=cfg.mca_heads, output_mode=mode)
        film_dim = c if cfg.conditioning == "film_utt" else None
        self.blocks = [TcnBlock(b, hidden, cfg.kernel, 2 ** x, rng, film_dim)
                       for _ in range(cfg.R) for x in range(cfg.X)]
        self.mask_act = PReLU()
        self.head = Linear(b, n, rng)
        self.decoder = WaveDecoder(cfg.frame_samples, cfg.hop_samples, n, rng)

    def forward(self, wave: Tensor, cond: Tensor | None) -> Tensor:
        enc = ops.relu(self.encoder(wave))
        h = self.enc_norm(enc)
        if self.cfg.conditioning == "concat":
            h = concat_condition(h, cond if cond is not None else Tensor(np.zeros((h.shape[0], self.cfg.cond_dim))))
        h = self.bottleneck(h)
        if cond is not None and self.cfg.conditioning == "mca_additive":
            h = h + self.mca(h, cond)
        elif cond is not None and self.cfg.conditioning == "mca_film":
            h = film(h, self.mca(h, cond))
        block_cond = cond if self.cfg.conditioning == "film_utt" else None
        for block in self.blocks:
            h = block(h, block_cond)
        out = self.head(self.mask_act(h))
        latent = enc * ops.sigmoid(out) if self.cfg.output_head == "mask" else out
        return self.decoder(latent, wave.shape[-1])


class TssModel(Module):
    """Upstream embedder + BN/MLP adapter + separator."""

    def __init__(self, cfg: SeparatorConfig, rng: np.random.Generator, upstream: Upstream | None = None):
        self.cfg = cfg
        level = cfg.level or "utterance"
        self.upstream = upstream if upstream is not None else FbankUpstream(level)
        self.upstream.frozen = not cfg.fine_tune_upstream
        self.adapter = Adapter(cfg.input_dim, rng, bn_enabled=cfg.adapter_bn, hidden=cfg.adapter_hidden,
                               out_dim=cfg.cond_dim)
        self.separator = (E3Net if cfg.family == "e3net" else ConvTasNet)(cfg, rng)

    def downstream_parameters(self):
        return self.adapter.parameters() + self.separator.parameters()

    def trainable_parameters(self):
        return self.downstream_parameters() + self.upstream.trainable_parameters()

    def condition(self, enroll) -> Tensor | None:
        if self.cfg.level is None:
            return None
        emb = self.upstream(enroll)
        if self.cfg.level == "utterance" and emb.ndim != 2 or self.cfg.level == "frame" and emb.ndim != 3:
            raise ContractError(f"{self.cfg.conditioning} conditioning needs {self.cfg.level}-level embeddings, "
                                f"got shape {emb.shape}")
        return self.adapter(emb)

    def forward(self, mixture, enroll, ablate: bool = False) -> Tensor:
        """Estimate ``[batch, n]``; ``ablate`` bypasses conditioning entirely."""
        wave = mixture if isinstance(mixture, Tensor) else Tensor(mixture)
        if wave.ndim != 2:
            raise ShapeError(f"mixture batch must be [batch, n], got {wave.shape}")
        n = wave.shape[-1]
        padded = self.separator.encoder.padded_length(n)
        if padded != n:
            wave = ops.pad(wave, 0, padded - n, axis=-1)
        est = self.separator(wave, None if ablate else self.condition(enroll))
        return est[:, :n] if padded != n else est


def separate(config: SeparatorConfig, model: TssModel, mixture, enrollment) -> np.ndarray:
    """Run a trained model on one mixture; ``enrollment`` is an EnrollmentEmbedding or raw upstream input."""
    if isinstance(enrollment, EnrollmentEmbedding):
        if config.level is not None and enrollment.kind != config.level:
            raise ContractError(f"{config.conditioning} conditioning needs a {config.level}-level enrollment, "
                                f"got {enrollment.kind}")
        enroll = enrollment.values[None]
    else:
        enroll = np.asarray(enrollment)[None]
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            dtype = model.adapter.fc1.weight.dtype
            out = model(Tensor(np.asarray(mixture, dtype=np.float64)[None], dtype=dtype), enroll)
    finally:
        model.train(was_training)
    return out.data[0].astype(np.float64)
