"""Desk-scale experiment recipes on synthetic or small corpora.

These are trend-level stand-ins for the large-scale experiments: they show
directions (d-vector vs raw FBANK, utterance vs frame conditioning, FN on or
off), not absolute numbers. Each recipe is a pure function of its arguments
and seed.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import dsp
from .autograd.optim import Adam, cosine_lr
from .datamix import MixtureSampler, spec_rng
from .embedders.base import cosine_score
from .embedders.dvector import DVectorConfig, DVectorModel, dvector_forward, dvector_train_step
from .eval import eer, generate_trials
from .separators import SeparatorConfig, TrainConfig, separate, si_snr, train

log = logging.getLogger(__name__)


def logmel_frames(signal, fn: bool = False) -> np.ndarray:
    fm = dsp.logmel(signal)
    return (dsp.feature_normalize(fm) if fn else fm).values.astype(np.float32)


def enrollment_input(signal, source: str, level: str, fn: bool = False, max_frames: int | None = None) -> np.ndarray:
    """Upstream input for one enrollment signal.

    FBANK at utterance level is the pooled 160-dim vector; every other case
    is the ``[T, 80]`` log-mel matrix (the d-vector consumes frames and pools
    itself). ``max_frames`` crops frame matrices to a common length.
    """
    frames = logmel_frames(signal, fn)
    if source == "fbank" and level == "utterance":
        return dsp.pool_mean_std(frames).astype(np.float32)
    return frames[:max_frames] if max_frames else frames


# ---------------------------------------------------------------------------
# speaker verification


@dataclass
class DVectorRun:
    model: DVectorModel
    trace: list[tuple[int, float]] = field(default_factory=list)
    seconds: float = 0.0


def train_dvector(utterances: Mapping[object, Sequence[np.ndarray]], config: DVectorConfig, iterations: int = 1500,
                  peak_lr: float = 3e-3, batch_size: int = 16, segment_frames: int = 60, seed: int = 0,
                  log_every: int = 100) -> DVectorRun:
    """Speaker-classification training on random log-mel crops.

    ``utterances[speaker]`` lists training signals; speakers are mapped to
    class ids in sorted order. Batches depend only on ``(seed, iteration)``.
    """
    speakers = sorted(utterances)
    if config.n_speakers != len(speakers):
        raise ValueError(f"config has {config.n_speakers} classes but {len(speakers)} speakers were given")
    feats = [[logmel_frames(x) for x in utterances[s]] for s in speakers]
    model = DVectorModel(config, np.random.default_rng(seed))
    opt = Adam(model.parameters(), lr=peak_lr)
    run = DVectorRun(model)
    t0 = time.perf_counter()
    for it in range(iterations):
        rng = spec_rng(seed, it)
        labels = rng.integers(0, len(speakers), batch_size)
        batch = []
        for lab in labels:
            f = feats[lab][rng.integers(len(feats[lab]))]
            start = int(rng.integers(0, max(len(f) - segment_frames, 0) + 1))
            batch.append(f[start:start + segment_frames])
        opt.lr = cosine_lr(it, iterations, peak_lr)
        loss = dvector_train_step(model, (np.stack(batch), labels), opt)
        if it % log_every == 0 or it == iterations - 1:
            run.trace.append((it, loss))
            log.info("dvector it %d loss %.4f", it, loss)
    run.seconds = time.perf_counter() - t0
    model.eval()
    return run


def verification_eer(utterances: Mapping[object, Sequence[np.ndarray]], embed: Callable[[np.ndarray], np.ndarray],
                     n_pairs: int = 1000, seed: int = 0) -> float:
    """EER of cosine-scored balanced trials over the given utterances."""
    ids = {s: [f"{s}/{u}" for u in range(len(v))] for s, v in utterances.items()}
    lookup = {f"{s}/{u}": x for s, v in utterances.items() for u, x in enumerate(v)}
    trials = generate_trials(ids, n_pairs=n_pairs, seed=seed)
    cache = {k: np.asarray(embed(x), dtype=np.float64) for k, x in lookup.items()}
    scores = [cosine_score(cache[t.utt_a], cache[t.utt_b]) for t in trials]
    return eer(scores, [t.label for t in trials])


def fbank_embedder(fn: bool = False) -> Callable[[np.ndarray], np.ndarray]:
    return lambda x: dsp.pool_mean_std(logmel_frames(x, fn))


def dvector_embedder(model: DVectorModel) -> Callable[[np.ndarray], np.ndarray]:
    return lambda x: dvector_forward(model, logmel_frames(x), "utterance").values


# ---------------------------------------------------------------------------
# separation


@dataclass
class SeparationRun:
    config: SeparatorConfig
    heldout_si_snri: float
    unseen_si_snri: float | None
    trace: list
    seconds: float
    model: object = field(repr=False, default=None)


def heldout_si_snri(config: SeparatorConfig, model, corpus: Mapping, enroll_fn: Callable, utts: Sequence[int],
                    n_examples: int, segment: int, seed: int) -> float:
    """Mean SI-SNRi on mixtures whose target, interferer and enrollment all come from ``utts``."""
    sampler = MixtureSampler(corpus, enroll_fn, segment, seed, utterances=utts)
    rng = spec_rng(seed, 0)
    vals = []
    for _ in range(n_examples):
        mix, tgt, enroll, _ = sampler.example(rng)
        est = separate(config, model, mix, enroll)
        vals.append(si_snr(est, tgt) - si_snr(mix, tgt))
    return float(np.mean(vals))


def separation_experiment(config: SeparatorConfig, corpus: Mapping, train_config: TrainConfig,
                          held_out: int = 2, segment: int = 8000, fn: bool = False, enroll_frames: int = 48,
                          n_eval: int = 300, unseen: Mapping | None = None, out_dir=None, model=None,
                          enroll_fn_for: Callable | None = None) -> SeparationRun:
    """Train on all but the last ``held_out`` utterances per speaker, score on those.

    ``unseen`` optionally adds a score on speakers never seen in training.
    ``enroll_fn_for(corpus)`` may replace the default enrollment features; it
    returns a function ``(speaker, utterance_index) -> upstream input``.
    """
    level = config.level

    def default_enroll_fn_for(c):
        cache = {}

        def fn_(spk, u):
            if (spk, u) not in cache:
                cache[spk, u] = enrollment_input(c[spk][u], config.embedding_source, level, fn, enroll_frames)
            return cache[spk, u]
        return fn_

    enroll_fn_for = enroll_fn_for or default_enroll_fn_for
    n_utts = min(len(v) for v in corpus.values())
    if n_utts - held_out < 2 or held_out < 2:
        raise ValueError(f"need >= 2 training and >= 2 held-out utterances per speaker, have {n_utts}")
    train_utts = list(range(n_utts - held_out))
    sampler = MixtureSampler(corpus, enroll_fn_for(corpus), segment, train_config.seed + 1, utterances=train_utts)
    t0 = time.perf_counter()
    result = train(train_config, config, sampler, model=model, out_dir=out_dir)
    seconds = time.perf_counter() - t0
    score = heldout_si_snri(config, result.model, corpus, enroll_fn_for(corpus), list(range(n_utts - held_out, n_utts)),
                            n_eval, segment, train_config.seed + 1000)
    unseen_score = None
    if unseen is not None:
        m = min(len(v) for v in unseen.values())
        unseen_score = heldout_si_snri(config, result.model, unseen, enroll_fn_for(unseen), list(range(m)), n_eval,
                                       segment, train_config.seed + 2000)
    return SeparationRun(config, score, unseen_score, result.trace, seconds, result.model)
