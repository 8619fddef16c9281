"""Signal-processing front-end: STFT, mel filterbank, log-mel (FBANK) features,
per-band feature normalisation, utterance pooling and WAV I/O."""

from __future__ import annotations

import logging
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, InputError

log = logging.getLogger(__name__)

SAMPLE_RATE = 16000


@dataclass(frozen=True)
class FbankConfig:
    sample_rate: int = SAMPLE_RATE
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    n_fft: int = 512
    n_mels: int = 80
    f_min: float = 0.0
    f_max: float = 8000.0
    floor: float = 1e-10
    window: str = "hann"
    preemphasis: float = 0.0

    @property
    def frame_samples(self) -> int:
        return int(round(self.sample_rate * self.frame_ms / 1000.0))

    @property
    def hop_samples(self) -> int:
        return int(round(self.sample_rate * self.hop_ms / 1000.0))


DEFAULT_FBANK = FbankConfig()


@dataclass
class FeatureMatrix:
    """``[T x n_mels]`` log-mel energies plus the framing that produced them."""

    values: np.ndarray
    frame_len_ms: float = 25.0
    hop_ms: float = 10.0
    sample_rate: int = SAMPLE_RATE
    floor: float = 1e-10

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def with_values(self, values: np.ndarray) -> "FeatureMatrix":
        return FeatureMatrix(values, self.frame_len_ms, self.hop_ms, self.sample_rate, self.floor)


@dataclass
class MelFilterbank:
    weights: np.ndarray  # [n_mels, n_fft // 2 + 1]
    f_min: float
    f_max: float
    n_fft: int
    sample_rate: int = SAMPLE_RATE
    centers_hz: np.ndarray = field(default_factory=lambda: np.zeros(0))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def num_frames(num_samples: int, frame_samples: int, hop_samples: int) -> int:
    if num_samples < frame_samples:
        return 0
    return 1 + (num_samples - frame_samples) // hop_samples


def get_window(window, frame_samples: int) -> np.ndarray:
    if isinstance(window, np.ndarray):
        if window.shape != (frame_samples,):
            raise ConfigError(f"window length {window.shape} does not match frame length {frame_samples}")
        return window.astype(np.float64)
    if window == "hann":
        # periodic Hann
        n = np.arange(frame_samples)
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / frame_samples)
    if window in ("rect", "rectangular", "boxcar", None):
        return np.ones(frame_samples)
    raise ConfigError(f"unknown window {window!r}")


def frames(signal: np.ndarray, frame_samples: int, hop_samples: int) -> np.ndarray:
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim != 1:
        raise InputError(f"expected a mono 1-D signal, got shape {signal.shape}")
    if len(signal) < frame_samples:
        raise InputError(f"signal has {len(signal)} samples, shorter than one frame ({frame_samples}); "
                         "pad it or reject the utterance")
    t = num_frames(len(signal), frame_samples, hop_samples)
    idx = np.arange(frame_samples)[None, :] + hop_samples * np.arange(t)[:, None]
    return signal[idx]


def stft(signal, frame_samples: int = 400, hop_samples: int = 160, window="hann", n_fft: int = 512) -> np.ndarray:
    """One-sided spectra of windowed frames, ``[T x (n_fft // 2 + 1)]`` complex.

    Frames are taken without centring or padding; each is zero-padded to ``n_fft``.
    """
    if n_fft < frame_samples:
        raise ConfigError(f"n_fft={n_fft} is smaller than the frame length {frame_samples}")
    fr = frames(signal, frame_samples, hop_samples) * get_window(window, frame_samples)
    return np.fft.rfft(fr, n=n_fft, axis=1)


def mel_matrix(n_mels: int = 80, n_fft: int = 512, sr: int = SAMPLE_RATE, f_min: float = 0.0,
               f_max: float | None = None) -> MelFilterbank:
    """Triangular filters with centres equally spaced on the mel scale.

    Each filter rises linearly from the previous centre to its own centre and
    falls to the next one, evaluated at the FFT bin frequencies; peak height 1.
    """
    f_max = sr / 2.0 if f_max is None else f_max
    if not 0.0 <= f_min < f_max <= sr / 2.0:
        raise ConfigError(f"need 0 <= f_min < f_max <= sr/2, got f_min={f_min}, f_max={f_max}, sr={sr}")
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    bins = np.arange(n_fft // 2 + 1) * sr / n_fft
    lo, center, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rise = (bins[None, :] - lo) / (center - lo)
    fall = (hi - bins[None, :]) / (hi - center)
    weights = np.maximum(0.0, np.minimum(rise, fall))
    empty = np.flatnonzero(weights.max(axis=1) == 0.0)
    if empty.size:
        raise ConfigError(f"{empty.size} of {n_mels} mel filters contain no FFT bin with n_fft={n_fft}; "
                          "increase n_fft or reduce n_mels")
    return MelFilterbank(weights, f_min, f_max, n_fft, sr, edges[1:-1])


_MEL_CACHE: dict[tuple, MelFilterbank] = {}


def _cached_mel(cfg: FbankConfig) -> MelFilterbank:
    key = (cfg.n_mels, cfg.n_fft, cfg.sample_rate, cfg.f_min, cfg.f_max)
    if key not in _MEL_CACHE:
        _MEL_CACHE[key] = mel_matrix(*key)
    return _MEL_CACHE[key]


def logmel(signal, config: FbankConfig = DEFAULT_FBANK) -> FeatureMatrix:
    """FBANK features: ``log(max(mel @ |STFT|^2, floor))`` per frame."""
    signal = np.asarray(signal, dtype=np.float64)
    if config.preemphasis:
        signal = np.concatenate([signal[:1], signal[1:] - config.preemphasis * signal[:-1]])
    spec = stft(signal, config.frame_samples, config.hop_samples, config.window, config.n_fft)
    power = spec.real ** 2 + spec.imag ** 2
    energies = power @ _cached_mel(config).weights.T
    values = np.log(np.maximum(energies, config.floor))
    return FeatureMatrix(values, config.frame_ms, config.hop_ms, config.sample_rate, config.floor)


def _values(features) -> np.ndarray:
    return features.values if isinstance(features, FeatureMatrix) else np.asarray(features, dtype=np.float64)


def feature_normalize(features):
    """Subtract the per-band temporal mean (FN). Returns the same type it was given."""
    x = _values(features)
    if x.ndim != 2 or x.shape[0] < 1:
        raise InputError(f"feature_normalize needs a non-empty [T x D] matrix, got {x.shape}")
    out = x - x.mean(axis=0, keepdims=True)
    return features.with_values(out) if isinstance(features, FeatureMatrix) else out


def pool_mean_std(features) -> np.ndarray:
    """Concatenate per-band temporal mean and population standard deviation."""
    x = _values(features)
    if x.ndim != 2 or x.shape[0] < 1:
        raise InputError(f"pool_mean_std needs at least one frame, got shape {x.shape}")
    if x.shape[0] == 1:
        log.warning("pool_mean_std: single frame, standard deviation set to 0")
        return np.concatenate([x[0], np.zeros(x.shape[1])])
    return np.concatenate([x.mean(axis=0), x.std(axis=0)])


# ---------------------------------------------------------------------------
# files


def read_wav(path) -> np.ndarray:
    """Read a 16 kHz mono 16-bit PCM WAV file into floats in [-1, 1)."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as w:
            sr, ch, width, n = w.getframerate(), w.getnchannels(), w.getsampwidth(), w.getnframes()
            raw = w.readframes(n)
    except FileNotFoundError:
        raise DataError(f"{path}: no such audio file") from None
    except (wave.Error, EOFError) as exc:
        raise DataError(f"{path}: not a PCM WAV file ({exc})") from None
    if sr != SAMPLE_RATE or ch != 1 or width != 2:
        raise DataError(f"{path}: need 16000 Hz mono 16-bit PCM, got {sr} Hz, {ch} channel(s), "
                        f"{8 * width}-bit")
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0


def write_wav(path, signal, sample_rate: int = SAMPLE_RATE) -> None:
    """Write floats as 16-bit PCM; values outside [-1, 1) are clipped."""
    x = np.asarray(signal, dtype=np.float64)
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.tobytes())


def save_features(path, features: FeatureMatrix) -> None:
    """Dump feature values as a ``.npy`` container (shape header + raw little-endian data)."""
    np.save(path, np.ascontiguousarray(features.values, dtype="<f8"), allow_pickle=False)


def load_features(path) -> FeatureMatrix:
    return FeatureMatrix(np.load(path, allow_pickle=False))
