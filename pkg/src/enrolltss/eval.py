"""Separation and verification metrics, trial lists and evaluation reports.

Trial list file: ``utt_a<TAB>utt_b<TAB>label`` per line, label ``same`` or
``different``.

Report CSV: optional leading ``# key=value`` lines carry the condition tags
(dataset, embedding, conditioning, enrollment), then a header row
``id,target,interferer,enrollment,mix_si_snr,out_si_snr,si_snri,sdri,error``
and one row per example. Failed examples have empty metric cells and the
error message in ``error``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .datamix import Manifest, render
from .errors import DataError, GenerationError, MetricError, TssError
from .separators.metrics import CLAMP_DB, si_snr

SAME, DIFFERENT = "same", "different"


# ---------------------------------------------------------------------------
# separation metrics


def si_snri(est, mixture, ref) -> float:
    """SI-SNR improvement of ``est`` over the unprocessed ``mixture`` (both clamped at +-60 dB)."""
    return si_snr(est, ref) - si_snr(mixture, ref)


def snr(est, ref) -> float:
    """Plain SNR ``10 log10(|ref|^2 / |ref - est|^2)`` without scale fitting, clamped to +-60 dB."""
    est = np.asarray(est, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if est.shape != ref.shape:
        raise MetricError(f"snr needs equal shapes, got {est.shape} and {ref.shape}")
    p_ref, p_err = ref @ ref, (ref - est) @ (ref - est)
    if p_ref == 0.0:
        raise MetricError("snr: reference is all zeros")
    if p_err == 0.0:
        return CLAMP_DB
    return float(np.clip(10.0 * np.log10(p_ref / p_err), -CLAMP_DB, CLAMP_DB))


def sdri(est, mixture, ref) -> float:
    """Simplified SDR improvement: plain SNR gain, no BSS-eval decomposition."""
    return snr(est, ref) - snr(mixture, ref)


# ---------------------------------------------------------------------------
# verification


@dataclass(frozen=True)
class TrialPair:
    utt_a: str
    utt_b: str
    label: str  # SAME | DIFFERENT

    def __post_init__(self):
        if self.utt_a == self.utt_b:
            raise ValueError(f"trial pairs need two different utterances, got {self.utt_a!r} twice")
        if self.label not in (SAME, DIFFERENT):
            raise ValueError(f"label must be 'same' or 'different', got {self.label!r}")


def _labels_to_bool(labels) -> np.ndarray:
    out = []
    for lab in labels:
        if isinstance(lab, str):
            if lab not in (SAME, DIFFERENT):
                raise MetricError(f"unknown trial label {lab!r}")
            out.append(lab == SAME)
        else:
            out.append(bool(lab))
    return np.array(out, dtype=bool)


def eer(scores, labels) -> float:
    """Equal error rate in percent; higher scores mean "same speaker".

    Thresholds are the distinct score values (plus +inf). At threshold t,
    FAR = fraction of different-speaker scores >= t and FRR = fraction of
    same-speaker scores < t. FAR - FRR falls from 1 to -1 as t rises; the
    result is the rate where it crosses zero, linearly interpolated between
    the two bracketing thresholds.
    """
    scores = np.asarray(scores, dtype=np.float64)
    same = _labels_to_bool(labels)
    if scores.shape != same.shape or scores.ndim != 1:
        raise MetricError(f"scores {scores.shape} and labels {same.shape} must be equal-length vectors")
    if not np.all(np.isfinite(scores)):
        raise MetricError("scores must be finite")
    n_same, n_diff = int(same.sum()), int((~same).sum())
    if n_same == 0 or n_diff == 0:
        raise MetricError(f"EER needs both labels, got {n_same} same and {n_diff} different")
    thresholds = np.append(np.unique(scores), np.inf)
    s_same, s_diff = np.sort(scores[same]), np.sort(scores[~same])
    far = (n_diff - np.searchsorted(s_diff, thresholds, side="left")) / n_diff
    frr = np.searchsorted(s_same, thresholds, side="left") / n_same
    d = far - frr
    i = int(np.argmax(d <= 0))
    if d[i] == 0 or i == 0:
        return 100.0 * float(far[i])
    lam = d[i - 1] / (d[i - 1] - d[i])
    return 100.0 * float(far[i - 1] + lam * (far[i] - far[i - 1]))


def generate_trials(speaker_map: Mapping[str, Sequence[str]], n_pairs: int = 50000, seed: int = 0,
                    channels: Mapping[str, str] | None = None, channel_constraint: bool = False,
                    max_tries_factor: int = 50) -> list[TrialPair]:
    """Balanced unique trial pairs: ``n_pairs // 2`` same-speaker, the rest different-speaker.

    With ``channel_constraint`` every pair must join utterances whose
    channel ids (from ``channels``) differ.
    """
    spk_of = {u: s for s, utts in speaker_map.items() for u in utts}
    eligible = {s: list(u) for s, u in speaker_map.items() if len(u) >= 2}
    if len(speaker_map) < 2 or not eligible:
        raise GenerationError("trial generation needs at least two speakers and one speaker with two utterances")
    if channel_constraint:
        if channels is None or any(u not in channels for u in spk_of):
            raise GenerationError("channel constraint requested but some utterances have no channel id")
    ok = (lambda a, b: channels[a] != channels[b]) if channel_constraint else (lambda a, b: True)

    same_pool = [(a, b) for utts in eligible.values() for i, a in enumerate(utts) for b in utts[i + 1:] if ok(a, b)]
    n_same = n_pairs // 2
    n_diff = n_pairs - n_same
    if n_same > len(same_pool):
        raise GenerationError(f"only {len(same_pool)} distinct same-speaker pairs exist"
                              + (" with differing channels" if channel_constraint else "")
                              + f"; {n_same} requested")
    all_utts = sorted(spk_of)
    if channel_constraint:
        by_chan: dict[str, int] = {}
        by_spk_chan: dict[tuple[str, str], int] = {}
        for u in all_utts:
            by_chan[channels[u]] = by_chan.get(channels[u], 0) + 1
            key = (spk_of[u], channels[u])
            by_spk_chan[key] = by_spk_chan.get(key, 0) + 1
        n = len(all_utts)
        cross_chan = (n * n - sum(c * c for c in by_chan.values())) // 2
        spk_sizes: dict[str, int] = {}
        for u in all_utts:
            spk_sizes[spk_of[u]] = spk_sizes.get(spk_of[u], 0) + 1
        same_spk_cross = sum((spk_sizes[s] ** 2 - sum(c * c for (s2, _), c in by_spk_chan.items() if s2 == s)) // 2
                             for s in spk_sizes)
        diff_possible = cross_chan - same_spk_cross
    else:
        n = len(all_utts)
        diff_possible = n * (n - 1) // 2 - sum(len(u) * (len(u) - 1) // 2 for u in speaker_map.values())
    if n_diff > diff_possible:
        raise GenerationError(f"only {diff_possible} distinct different-speaker pairs exist"
                              + (" with differing channels" if channel_constraint else "")
                              + f"; {n_diff} requested")

    rng = np.random.default_rng(seed)
    picks = rng.choice(len(same_pool), n_same, replace=False)
    pairs = [TrialPair(*same_pool[k], SAME) for k in picks]
    seen: set[tuple[str, str]] = set()
    tries = 0
    if n_diff > diff_possible // 2:
        # dense request: enumerate then sample
        pool = [(a, b) for i, a in enumerate(all_utts) for b in all_utts[i + 1:]
                if spk_of[a] != spk_of[b] and ok(a, b)]
        pairs += [TrialPair(*pool[k], DIFFERENT) for k in rng.choice(len(pool), n_diff, replace=False)]
    else:
        while len(seen) < n_diff:
            tries += 1
            if tries > max_tries_factor * max(n_diff, 100):
                raise GenerationError("could not draw enough different-speaker pairs")
            i, j = rng.choice(len(all_utts), 2, replace=False)
            a, b = sorted((all_utts[i], all_utts[j]))
            if spk_of[a] == spk_of[b] or not ok(a, b) or (a, b) in seen:
                continue
            seen.add((a, b))
            pairs.append(TrialPair(a, b, DIFFERENT))
    order = rng.permutation(len(pairs))
    return [pairs[k] for k in order]


def write_trials(path, trials: Sequence[TrialPair]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in trials:
            fh.write(f"{t.utt_a}\t{t.utt_b}\t{t.label}\n")


def read_trials(path) -> list[TrialPair]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: trial list not found")
    out = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != 3:
            raise DataError(f"{path}:{lineno}: expected utt_a<TAB>utt_b<TAB>label")
        try:
            out.append(TrialPair(*cols))
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
    return out


def score_trials(trials: Sequence[TrialPair], embed: Callable[[str], np.ndarray]) -> tuple[np.ndarray, list[str]]:
    """Cosine scores for each trial; ``embed`` maps an utterance id to a vector (memoised here)."""
    from .embedders.base import cosine_score
    cache: dict[str, np.ndarray] = {}

    def get(u):
        if u not in cache:
            cache[u] = np.asarray(embed(u), dtype=np.float64)
        return cache[u]

    scores = np.array([cosine_score(get(t.utt_a), get(t.utt_b)) for t in trials])
    return scores, [t.label for t in trials]


# ---------------------------------------------------------------------------
# reports

COLUMNS = ["id", "target", "interferer", "enrollment", "mix_si_snr", "out_si_snr", "si_snri", "sdri", "error"]
METRICS = ["mix_si_snr", "out_si_snr", "si_snri", "sdri"]


@dataclass
class EvalReport:
    rows: list[dict] = field(default_factory=list)
    tags: dict[str, str] = field(default_factory=dict)

    @property
    def ok_rows(self) -> list[dict]:
        return [r for r in self.rows if not r.get("error")]

    @property
    def n_errors(self) -> int:
        return len(self.rows) - len(self.ok_rows)

    def aggregate(self) -> dict[str, float]:
        ok = self.ok_rows
        return {m: (float(np.mean([r[m] for r in ok])) if ok else math.nan) for m in METRICS}

    @property
    def status(self) -> int:
        """0 when every example succeeded, 5 on partial failure or an empty report."""
        return 0 if self.rows and not self.n_errors else 5

    def to_csv(self) -> str:
        buf = io.StringIO()
        for k, v in sorted(self.tags.items()):
            buf.write(f"# {k}={v}\n")
        w = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({c: (repr(r[c]) if c in METRICS and r.get(c) is not None else r.get(c) or "")
                        for c in COLUMNS})
        return buf.getvalue()

    def write(self, path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    @classmethod
    def from_csv(cls, text: str) -> "EvalReport":
        lines = text.splitlines()
        tags = {}
        while lines and lines[0].startswith("# "):
            k, _, v = lines.pop(0)[2:].partition("=")
            tags[k] = v
        rows = []
        for r in csv.DictReader(lines):
            row = {c: r[c] for c in ("id", "target", "interferer", "enrollment")}
            for m in METRICS:
                row[m] = float(r[m]) if r[m] != "" else None
            row["error"] = r["error"] or None
            rows.append(row)
        return cls(rows, tags)

    @classmethod
    def read(cls, path) -> "EvalReport":
        return cls.from_csv(Path(path).read_text(encoding="utf-8"))


def evaluate(separator, manifest: Manifest, report_path=None, tags: Mapping[str, str] | None = None,
             enroll_seconds: float | None = None, loader: Callable | None = None) -> EvalReport:
    """Separate every manifest record and score it.

    ``separator`` is ``"identity"`` (output = mixture), ``"oracle"``
    (output = target) or a callable ``(mixture, enrollment) -> estimate``.
    A record whose audio cannot be read gets an error row; the run goes on.
    """
    if separator == "identity":
        fn = lambda mix, enroll: mix  # noqa: E731
    elif separator == "oracle":
        fn = None
    elif callable(separator):
        fn = separator
    else:
        raise ValueError(f"unknown separator {separator!r}")
    report = EvalReport([], dict(tags or {}))
    kwargs = {"loader": loader} if loader is not None else {}
    for i, spec in enumerate(manifest.specs):
        row = {"id": str(i), "target": spec.target_path, "interferer": spec.interferer_path,
               "enrollment": ";".join(spec.enrollment_paths), "error": None}
        try:
            ex = render(spec, manifest, enroll_seconds, **kwargs)
            est = ex.target if fn is None else np.asarray(fn(ex.mixture, ex.enrollment), dtype=np.float64)
            if est.shape != ex.mixture.shape:
                raise MetricError(f"estimate has {est.shape[-1]} samples, mixture {len(ex.mixture)}")
            mix_s = si_snr(ex.mixture, ex.target)
            out_s = si_snr(est, ex.target)
            row.update(mix_si_snr=mix_s, out_si_snr=out_s, si_snri=out_s - mix_s, sdri=sdri(est, ex.mixture, ex.target))
        except TssError as exc:
            row.update({m: None for m in METRICS}, error=f"{type(exc).__name__}: {exc}")
        report.rows.append(row)
    if report_path is not None:
        report.write(report_path)
    return report
