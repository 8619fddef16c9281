"""Deterministic construction of target-speaker training and test examples.

Manifest file (UTF-8, tab-separated, one mixture per line; ``#`` starts a
comment line; ``-`` marks an absent optional field)::

    target  interferer  offset  enroll1;enroll2;...  noise_path  snr_db  reverb_path  seed

Paths are relative to the corpus root unless absolute. ``offset`` is the
interferer start sample. ``snr_db`` is ``inf`` or ``-`` for clean enrollment.
"""

from __future__ import annotations

import csv
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .dsp import SAMPLE_RATE, read_wav, write_wav
from .errors import ConfigError, CorruptionError, DataError, InputError

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# signal operations


def fit_interferer(interferer, length: int, offset: int = 0) -> np.ndarray:
    """Crop from ``offset`` when long enough, otherwise repeat cyclically (from ``offset``) to ``length``."""
    interferer = np.asarray(interferer, dtype=np.float64)
    if interferer.size == 0:
        raise InputError("empty interferer")
    n = len(interferer)
    if n >= length:
        offset = min(max(offset, 0), n - length)
        return interferer[offset:offset + length].copy()
    idx = (np.arange(length) + offset) % n
    return interferer[idx]


def make_mixture(target, interferer, offset: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Unscaled two-speaker sum; returns ``(mixture, target_ref)``."""
    target = np.asarray(target, dtype=np.float64)
    if target.size == 0:
        raise InputError("empty target")
    return target + fit_interferer(interferer, len(target), offset), target.copy()


def trim_silence(signal, threshold_db: float = -40.0, min_gap_ms: float = 200.0, frame_ms: float = 25.0,
                 sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Drop quiet regions.

    Non-overlapping ``frame_ms`` frames whose RMS is more than
    ``|threshold_db|`` below the loudest frame are quiet. Leading and trailing
    quiet runs are removed, as are internal quiet runs lasting at least
    ``min_gap_ms``; shorter pauses inside speech are kept.
    """
    x = np.asarray(signal, dtype=np.float64)
    hop = max(1, int(round(frame_ms * sample_rate / 1000)))
    n_frames = math.ceil(len(x) / hop)
    if n_frames == 0:
        raise InputError("cannot trim an empty signal")
    padded = np.zeros(n_frames * hop)
    padded[:len(x)] = x
    rms = np.sqrt((padded.reshape(n_frames, hop) ** 2).mean(axis=1))
    peak = rms.max()
    if peak == 0.0:
        raise InputError("signal is entirely silent; nothing left after trimming")
    loud = 20.0 * np.log10(np.maximum(rms, 1e-300) / peak) >= threshold_db
    keep = loud.copy()
    min_gap = max(1, int(math.ceil(min_gap_ms / frame_ms)))
    first, last = np.flatnonzero(loud)[[0, -1]]
    i = first
    while i <= last:
        if not loud[i]:
            j = i
            while not loud[j]:
                j += 1
            if j - i < min_gap:
                keep[i:j] = True
            i = j
        else:
            i += 1
    mask = np.repeat(keep, hop)[:len(x)]
    return x[mask]


def build_enrollment(utterances: Sequence[np.ndarray], target_seconds: float = 20.0,
                     sample_rate: int = SAMPLE_RATE, trim: bool = False) -> np.ndarray:
    """Concatenate utterances in order and cut to exactly ``target_seconds`` (all of them if shorter)."""
    if len(utterances) == 0:
        raise InputError("no enrollment utterances given")
    want = int(round(target_seconds * sample_rate))
    parts, total = [], 0
    for u in utterances:
        u = trim_silence(u, sample_rate=sample_rate) if trim else np.asarray(u, dtype=np.float64)
        parts.append(u)
        total += len(u)
        if total >= want:
            break
    out = np.concatenate(parts)
    if len(out) < want:
        log.warning("only %.2f s of enrollment audio available, wanted %.2f s", len(out) / sample_rate,
                    target_seconds)
        return out
    return out[:want]


def power(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.mean(x * x))


def corrupt_enrollment(signal, noise=None, snr_db: float = math.inf, reverb=None) -> np.ndarray:
    """Optional reverb (full convolution, truncated), then additive noise at ``snr_db``.

    ``snr_db = inf`` skips the noise stage. The noise is tiled or cropped to
    the signal length and scaled so that ``10 log10(P_signal / P_noise)``
    equals ``snr_db``, with ``P_signal`` measured after reverb.
    """
    x = np.asarray(signal, dtype=np.float64)
    if reverb is not None:
        x = np.convolve(x, np.asarray(reverb, dtype=np.float64))[:len(x)]
    if math.isinf(snr_db) and snr_db > 0:
        return x.copy() if reverb is None else x
    if not math.isfinite(snr_db):
        raise CorruptionError(f"snr_db must be finite or +inf, got {snr_db}")
    if noise is None or len(noise) == 0:
        raise CorruptionError("noise corruption requested without noise samples")
    n = fit_interferer(noise, len(x))
    ps, pn = power(x), power(n)
    if ps == 0.0 or pn == 0.0:
        raise CorruptionError(f"cannot set an SNR with zero power (signal {ps:.3g}, noise {pn:.3g})")
    return x + n * math.sqrt(ps / (pn * 10.0 ** (snr_db / 10.0)))


# ---------------------------------------------------------------------------
# specs and manifests


@dataclass(frozen=True)
class Corruption:
    noise_path: str
    snr_db: float
    reverb_path: str | None = None


@dataclass(frozen=True)
class MixtureSpec:
    target_path: str
    interferer_path: str
    enrollment_paths: tuple[str, ...]
    interferer_offset: int = 0
    corruption: Corruption | None = None
    seed: int = 0

    def __post_init__(self):
        if not self.enrollment_paths:
            raise ConfigError("a mixture needs at least one enrollment utterance")


@dataclass
class Manifest:
    specs: list[MixtureSpec]
    root: Path = Path(".")
    seed: int = 0

    def __len__(self) -> int:
        return len(self.specs)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.root / p


def _opt(value: str) -> str | None:
    return None if value in ("-", "") else value


def write_manifest(path, manifest: Manifest) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# root={manifest.root}\tseed={manifest.seed}\n")
        for s in manifest.specs:
            c = s.corruption
            row = [s.target_path, s.interferer_path, str(s.interferer_offset), ";".join(s.enrollment_paths),
                   c.noise_path if c else "-", repr(float(c.snr_db)) if c else "-",
                   (c.reverb_path or "-") if c else "-", str(s.seed)]
            fh.write("\t".join(row) + "\n")


def read_manifest(path, root=None) -> Manifest:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: manifest not found")
    specs, header = [], {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        if line.startswith("#"):
            header.update(dict(kv.split("=", 1) for kv in line[1:].strip().split("\t") if "=" in kv))
            continue
        cols = line.split("\t")
        if len(cols) != 8:
            raise DataError(f"{path}:{lineno}: expected 8 tab-separated fields, got {len(cols)}")
        tgt, itf, off, enr, noise, snr, rev, seed = cols
        try:
            corruption = None
            if _opt(noise) is not None and _opt(snr) is not None and float(snr) != math.inf:
                corruption = Corruption(noise, float(snr), _opt(rev))
            specs.append(MixtureSpec(tgt, itf, tuple(enr.split(";")), int(off), corruption, int(seed)))
        except (ValueError, ConfigError) as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
    root = Path(root) if root is not None else Path(header.get("root", path.parent))
    return Manifest(specs, root, int(header.get("seed", 0)))


def read_triplets(path, root=None, columns: Sequence[str] = ("target", "interferer", "enrollment"),
                  delimiter: str | None = None) -> Manifest:
    """Load a public-style triplet list (one target/interferer/enrollment file triple per line)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: triplet list not found")
    if set(columns) != {"target", "interferer", "enrollment"}:
        raise ConfigError(f"columns must name target, interferer and enrollment, got {columns}")
    text = path.read_text(encoding="utf-8")
    if delimiter is None:
        delimiter = "," if "," in text.splitlines()[0] else "\t" if "\t" in text else " "
    specs = []
    for lineno, row in enumerate(csv.reader(text.splitlines(), delimiter=delimiter), 1):
        row = [c.strip() for c in row if c.strip()]
        if not row or row[0].startswith("#"):
            continue
        if len(row) < 3:
            raise DataError(f"{path}:{lineno}: expected 3 paths, got {len(row)}")
        rec = dict(zip(columns, row[:3]))
        specs.append(MixtureSpec(rec["target"], rec["interferer"], (rec["enrollment"],), 0, None, lineno))
    return Manifest(specs, Path(root) if root is not None else path.parent)


@dataclass
class RenderedExample:
    mixture: np.ndarray
    target: np.ndarray
    enrollment: np.ndarray
    interferer: np.ndarray = field(repr=False, default=None)


def render(spec: MixtureSpec, manifest: Manifest, enroll_seconds: float | None = None,
           loader: Callable = read_wav) -> RenderedExample:
    """Read the record's audio and build mixture, target and (possibly corrupted) enrollment."""
    target = loader(manifest.resolve(spec.target_path))
    interferer = loader(manifest.resolve(spec.interferer_path))
    adjusted = fit_interferer(interferer, len(target), spec.interferer_offset)
    enrolls = [loader(manifest.resolve(p)) for p in spec.enrollment_paths]
    enrollment = build_enrollment(enrolls, enroll_seconds) if enroll_seconds else np.concatenate(enrolls)
    if spec.corruption is not None:
        c = spec.corruption
        noise = loader(manifest.resolve(c.noise_path))
        reverb = loader(manifest.resolve(c.reverb_path)) if c.reverb_path else None
        enrollment = corrupt_enrollment(enrollment, noise, c.snr_db, reverb)
    return RenderedExample(target + adjusted, target, enrollment, adjusted)


def render_manifest(manifest: Manifest, out_dir, enroll_seconds: float | None = None) -> list[dict]:
    """Write ``NNNNN_mix.wav``, ``NNNNN_target.wav`` and ``NNNNN_enroll.wav`` per record."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, spec in enumerate(manifest.specs):
        ex = render(spec, manifest, enroll_seconds)
        names = {k: out / f"{i:05d}_{k}.wav" for k in ("mix", "target", "enroll")}
        write_wav(names["mix"], ex.mixture)
        write_wav(names["target"], ex.target)
        write_wav(names["enroll"], ex.enrollment)
        rows.append({k: str(v) for k, v in names.items()})
    return rows


# ---------------------------------------------------------------------------
# corpus index and online sampling


@dataclass
class CorpusIndex:
    """``utterances[speaker] -> list of (utterance id, path, length in samples)``."""

    utterances: dict[str, list[tuple[str, str, int]]]
    root: Path = Path(".")

    @property
    def speakers(self) -> list[str]:
        return sorted(self.utterances)

    @classmethod
    def scan(cls, root) -> "CorpusIndex":
        """Index ``root/<speaker>/<utterance>.wav``."""
        import wave
        root = Path(root)
        if not root.is_dir():
            raise DataError(f"{root}: corpus root is not a directory")
        utts: dict[str, list] = {}
        for spk_dir in sorted(p for p in root.iterdir() if p.is_dir()):
            for wav in sorted(spk_dir.glob("*.wav")):
                with wave.open(str(wav), "rb") as w:
                    n = w.getnframes()
                utts.setdefault(spk_dir.name, []).append((wav.stem, str(wav.relative_to(root)), n))
        if not utts:
            raise DataError(f"{root}: no <speaker>/<utterance>.wav files found")
        return cls(utts, root)


def spec_rng(seed: int, iteration: int) -> np.random.Generator:
    """Counter-based generator: a hash of (seed, iteration), independent of call order."""
    return np.random.default_rng([seed, iteration])


def sample_online(index: CorpusIndex, seed: int, iteration: int, n_enroll: int = 1,
                  max_redraws: int = 100) -> MixtureSpec:
    """Draw one mixture spec as a pure function of ``(seed, iteration)``.

    Target speakers are drawn uniformly; a speaker with fewer than
    ``n_enroll + 1`` utterances cannot be a target, and the draw is repeated
    with the same generator (at most ``max_redraws`` times).
    """
    speakers = index.speakers
    if len(speakers) < 2:
        raise DataError("online mixing needs at least two speakers")
    rng = spec_rng(seed, iteration)
    for _ in range(max_redraws):
        t_spk = speakers[rng.integers(len(speakers))]
        t_utts = index.utterances[t_spk]
        if len(t_utts) < n_enroll + 1:
            continue  # re-draw
        others = [s for s in speakers if s != t_spk]
        i_spk = others[rng.integers(len(others))]
        picks = rng.permutation(len(t_utts))[:n_enroll + 1]
        target = t_utts[picks[0]]
        enrolls = tuple(t_utts[k][1] for k in picks[1:])
        interferer = index.utterances[i_spk][rng.integers(len(index.utterances[i_spk]))]
        span = interferer[2] - target[2]
        offset = int(rng.integers(0, span + 1)) if span > 0 else 0
        return MixtureSpec(target[1], interferer[1], enrolls, offset, None, int(seed))
    raise DataError(f"no speaker with at least {n_enroll + 1} utterances after {max_redraws} draws")


# ---------------------------------------------------------------------------
# batch sampler for separator training


class MixtureSampler:
    """Training batches from an in-memory corpus, keyed by iteration.

    ``corpus[speaker]`` is a list of 1-D arrays; ``enroll_fn(speaker,
    utterance_index)`` returns the upstream input for an enrollment
    utterance (e.g. pooled FBANK). Segments of ``segment`` samples are cut
    at random offsets; the interferer segment is cropped the same way.
    """

    def __init__(self, corpus: dict, enroll_fn: Callable, segment: int, seed: int = 0,
                 utterances: Sequence[int] | None = None):
        self.corpus = corpus
        self.speakers = sorted(corpus)
        if len(self.speakers) < 2:
            raise DataError("need at least two speakers")
        self.enroll_fn = enroll_fn
        self.segment = segment
        self.seed = seed
        self.utterances = list(utterances) if utterances is not None else None

    def _utts(self, spk) -> list[int]:
        n = len(self.corpus[spk])
        return [u for u in (self.utterances or range(n)) if u < n]

    def example(self, rng: np.random.Generator):
        i, j = rng.choice(len(self.speakers), 2, replace=False)
        t_spk, i_spk = self.speakers[i], self.speakers[j]
        t_utts = self._utts(t_spk)
        tu = t_utts[rng.integers(len(t_utts))]
        choices = [u for u in t_utts if u != tu] or [u for u in range(len(self.corpus[t_spk])) if u != tu]
        eu = choices[rng.integers(len(choices))]
        i_utts = self._utts(i_spk)
        iu = i_utts[rng.integers(len(i_utts))]
        a, b = self.corpus[t_spk][tu], self.corpus[i_spk][iu]
        oa = int(rng.integers(0, max(len(a) - self.segment, 0) + 1))
        x = fit_interferer(a, self.segment, oa)
        y = fit_interferer(b, self.segment, int(rng.integers(0, max(len(b) - self.segment, 0) + 1)))
        return x + y, x, self.enroll_fn(t_spk, eu), (t_spk, tu, i_spk, iu, eu)

    def __call__(self, iteration: int, batch_size: int):
        from .separators.training import Batch
        rng = spec_rng(self.seed, iteration)
        rows = [self.example(rng) for _ in range(batch_size)]
        return Batch(np.stack([r[0] for r in rows]), np.stack([r[1] for r in rows]),
                     np.stack([r[2] for r in rows]))


def channel_id(path: str) -> str | None:
    """Microphone id from names like ``p225_001_mic2.wav``."""
    m = re.search(r"_mic(\d+)", Path(path).stem)
    return m.group(1) if m else None
