"""Separator training loop.

A sampler is any callable ``sampler(iteration, batch_size) -> Batch``; it
must be a pure function of its arguments (the synthetic and manifest
samplers key their RNG on the iteration), which makes runs deterministic
and lets a producer thread prefetch batches through a bounded queue.
"""

from __future__ import annotations

import csv
import logging
import math
import queue
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..autograd import Tensor, precision
from ..autograd.checkpoint import save_checkpoint
from ..autograd.optim import Adam, clip_grad_norm, cosine_lr
from ..errors import TrainingError
from .config import SeparatorConfig, TrainConfig
from .metrics import si_snr_loss
from .models import TssModel

log = logging.getLogger(__name__)


@dataclass
class Batch:
    mixture: np.ndarray  # [batch, n]
    target: np.ndarray  # [batch, n]
    enroll: np.ndarray  # upstream input, leading batch axis


@dataclass
class TrainResult:
    model: TssModel
    trace: list[tuple[int, float, float]] = field(default_factory=list)  # (iteration, lr, loss)
    checkpoint: Path | None = None


def _batches(sampler: Callable, cfg: TrainConfig):
    if cfg.prefetch <= 0:
        for it in range(cfg.iterations):
            yield sampler(it, cfg.batch_size)
        return
    q: queue.Queue = queue.Queue(maxsize=cfg.prefetch)
    stop = threading.Event()

    def produce():
        try:
            for it in range(cfg.iterations):
                if stop.is_set():
                    return
                q.put(sampler(it, cfg.batch_size))
        except BaseException as exc:  # surface sampler failures in the training thread
            q.put(exc)

    thread = threading.Thread(target=produce, daemon=True)
    thread.start()
    try:
        for _ in range(cfg.iterations):
            item = q.get()
            if isinstance(item, BaseException):
                raise item
            yield item
    finally:
        stop.set()
        while not q.empty():
            q.get_nowait()


def write_trace(path, trace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "lr", "loss"])
        for it, lr, loss in trace:
            w.writerow([it, repr(lr), repr(loss)])


def read_trace(path) -> list[tuple[int, float, float]]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [(int(r["iteration"]), float(r["lr"]), float(r["loss"])) for r in rows]


def _save(model: TssModel, path: Path, meta: dict) -> None:
    save_checkpoint(path, model.state_dict(), meta)


def train(config: TrainConfig, sep: SeparatorConfig, sampler: Callable, model: TssModel | None = None,
          out_dir=None) -> TrainResult:
    """Minimise negative SI-SNR with Adam, cosine decay and global-norm clipping.

    Writes ``loss.csv`` and ``model.ckpt`` under ``out_dir`` when given
    (plus ``model_<iter>.ckpt`` every ``checkpoint_every`` iterations). A
    non-finite loss stops training after saving the last good parameters
    to ``last_good.ckpt``.
    """
    dtype = np.float32 if config.precision == "float32" else np.float64
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    meta = {"separator": sep.to_dict(), "train": config.to_dict()}
    with precision(dtype):
        if model is None:
            model = TssModel(sep, np.random.default_rng(config.seed))
        model.to(dtype).train()
        params = model.trainable_parameters()
        opt = Adam(params, lr=config.peak_lr, betas=config.betas, eps=config.eps)
        result = TrainResult(model)
        for it, batch in enumerate(_batches(sampler, config)):
            lr = cosine_lr(it, config.iterations, config.peak_lr)
            opt.lr = lr
            opt.zero_grad()
            model.upstream.zero_grad()
            est = model(Tensor(batch.mixture, dtype=dtype), batch.enroll)
            loss = si_snr_loss(est, batch.target)
            value = loss.item()
            if not math.isfinite(value):
                path = None
                if out is not None:
                    path = out / "last_good.ckpt"
                    _save(model, path, {**meta, "iteration": it})
                    write_trace(out / "loss.csv", result.trace)
                raise TrainingError(f"non-finite loss {value} at iteration {it}"
                                    + (f"; last good parameters saved to {path}" if path else ""))
            loss.backward()
            clip_grad_norm(params, config.grad_clip)
            opt.step()
            if it % config.log_every == 0 or it == config.iterations - 1:
                result.trace.append((it, lr, value))
                log.info("iter %d lr %.3g loss %.4f", it, lr, value)
            if out is not None and config.checkpoint_every and (it + 1) % config.checkpoint_every == 0:
                _save(model, out / f"model_{it + 1}.ckpt", {**meta, "iteration": it + 1})
        if out is not None:
            result.checkpoint = out / "model.ckpt"
            _save(model, result.checkpoint, {**meta, "iteration": config.iterations})
            write_trace(out / "loss.csv", result.trace)
    return result
