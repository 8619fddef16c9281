"""Synthetic "speakers" for desk-scale experiments.

A speaker is a harmonic stack: a characteristic f0 plus a spectral envelope,
either three formant-like resonances (``"formant"``) or a single
log-frequency Gaussian band around a speaker-specific centre (``"band"``).
Band speakers occupy partly disjoint regions of the spectrum, which is what a
small separator with 20 ms frames can exploit; broadband formant speakers
overlap everywhere and only differ in harmonic spacing. Utterances are strings of syllables with their own pitch
glides and amplitude envelopes, passed through a random per-utterance
channel (gain and spectral tilt), so raw log-mel statistics mix speaker and
channel information. Everything is a pure function of ``(seed, speaker,
utterance)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import SAMPLE_RATE, write_wav
from .errors import ConfigError

MAX_HARMONIC_HZ = 4000.0


@dataclass(frozen=True)
class SpeakerProfile:
    index: int
    f0: float
    formants: tuple[float, ...]
    bandwidths: tuple[float, ...]
    formant_gains: tuple[float, ...]
    brightness: float  # per-harmonic roll-off exponent
    kind: str = "formant"

    def envelope(self, freqs: np.ndarray) -> np.ndarray:
        if self.kind == "band":
            octaves = np.log2(np.maximum(freqs, 1.0) / self.formants[0]) / self.bandwidths[0]
            return np.exp(-0.5 * octaves ** 2) + 0.01
        env = np.zeros_like(freqs)
        for fc, bw, g in zip(self.formants, self.bandwidths, self.formant_gains):
            env += g / (1.0 + ((freqs - fc) / bw) ** 2)
        return (0.05 + env) * (np.maximum(freqs, 50.0) / 100.0) ** (-self.brightness)


PROFILES = ("formant", "band")


def speaker_profile(index: int, seed: int = 0, kind: str = "formant", band_width: float = 0.25) -> SpeakerProfile:
    """Deterministic profile for speaker ``index``; ``band_width`` is the band's std in octaves."""
    if kind not in PROFILES:
        raise ConfigError(f"profile kind must be one of {PROFILES}, got {kind!r}")
    rng = np.random.default_rng([seed, index, 7])
    f0 = float(np.exp(rng.uniform(np.log(85.0), np.log(290.0))))
    if kind == "band":
        fc = float(np.exp(rng.uniform(np.log(300.0), np.log(3000.0))))
        return SpeakerProfile(index, f0, (fc,), (band_width,), (1.0,), 0.0, "band")
    f1 = rng.uniform(300, 900)
    f2 = rng.uniform(max(f1 + 300, 900), 2400)
    f3 = rng.uniform(2300, 3600)
    return SpeakerProfile(index, f0, (f1, f2, f3), tuple(rng.uniform(60, 220, 3)),
                          tuple(rng.uniform(0.4, 1.0, 3)), float(rng.uniform(0.3, 1.0)))


def _channel(x: np.ndarray, rng: np.random.Generator, strength: float) -> np.ndarray:
    if strength <= 0:
        return x
    tilt = rng.uniform(-0.7, 0.7) * strength
    y = x.copy()
    y[1:] -= tilt * x[:-1]
    gain_db = rng.uniform(-10.0, 10.0) * strength
    return y * 10.0 ** (gain_db / 20.0)


def synth_utterance(profile: SpeakerProfile, duration: float, seed: int = 0, utt: int = 0,
                    channel: float = 1.0, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Render one utterance of ``duration`` seconds (RMS about 0.05 before the channel)."""
    rng = np.random.default_rng([seed, profile.index, utt, 11])
    n = int(round(duration * sample_rate))
    out = np.zeros(n)
    f0_utt = profile.f0 * np.exp(rng.normal(0.0, 0.04))
    pos = int(rng.integers(0, int(0.05 * sample_rate)))
    while pos < n:
        syl = int(rng.uniform(0.12, 0.3) * sample_rate)
        gap = int(rng.uniform(0.02, 0.08) * sample_rate)
        m = min(syl, n - pos)
        ramp = np.arange(m) / max(m - 1, 1)
        f0 = f0_utt * np.exp(rng.normal(0.0, 0.05) + rng.normal(0.0, 0.08) * ramp)  # syllable pitch glide
        phase = 2 * np.pi * np.cumsum(f0) / sample_rate
        k = np.arange(1, int(MAX_HARMONIC_HZ // (f0_utt * 1.2)) + 1)
        amps = profile.envelope(k * f0_utt)
        seg = (amps[:, None] * np.sin(k[:, None] * phase[None, :] + rng.uniform(0, 2 * np.pi, len(k))[:, None])).sum(0)
        env = np.sin(np.pi * np.arange(m) / syl) ** 0.6
        out[pos:pos + m] = seg * env * rng.uniform(0.6, 1.0)
        pos += syl + gap
    rms = np.sqrt(np.mean(out ** 2))
    out = out * (0.05 / rms) if rms > 0 else out
    out += rng.normal(0.0, 1e-4, n)
    return _channel(out, rng, channel)


class SyntheticCorpus:
    """In-memory corpus: ``utterances[speaker][utt]`` arrays at 16 kHz."""

    def __init__(self, n_speakers: int, n_utts: int, duration: float = 1.0, seed: int = 0, channel: float = 1.0,
                 first_speaker: int = 0, profile: str = "formant", band_width: float = 0.25):
        self.seed = seed
        self.speakers = list(range(first_speaker, first_speaker + n_speakers))
        self.profiles = {s: speaker_profile(s, seed, profile, band_width) for s in self.speakers}
        self.utterances = {s: [synth_utterance(self.profiles[s], duration, seed, u, channel).astype(np.float32)
                               for u in range(n_utts)] for s in self.speakers}

    def __len__(self) -> int:
        return sum(len(v) for v in self.utterances.values())

    def items(self):
        for s in self.speakers:
            for u, x in enumerate(self.utterances[s]):
                yield s, u, x


def write_corpus(root, n_speakers: int, n_utts: int, duration: float = 1.0, seed: int = 0, channel: float = 1.0,
                 mics: int = 0, profile: str = "formant", band_width: float = 0.25) -> list[Path]:
    """Write ``root/spkNNN/uttMM.wav`` (``uttMM_micK.wav`` with ``mics`` > 0, alternating channels)."""
    root = Path(root)
    paths = []
    for s in range(n_speakers):
        prof = speaker_profile(s, seed, profile, band_width)
        d = root / f"spk{s:03d}"
        d.mkdir(parents=True, exist_ok=True)
        for u in range(n_utts):
            name = f"utt{u:02d}" + (f"_mic{u % mics + 1}" if mics else "") + ".wav"
            x = synth_utterance(prof, duration, seed, u, channel)
            write_wav(d / name, np.clip(x, -1.0, 1.0))
            paths.append(d / name)
    return paths
