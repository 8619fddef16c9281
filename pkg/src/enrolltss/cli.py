"""Command-line entry point.

Exit codes: 0 success, 2 configuration or usage error, 3 data error
(missing or unreadable audio, manifests, corpora), 4 numeric failure
(non-finite training loss, undefined metric), 5 partial failure (some
evaluation rows failed, or nothing was evaluated).

Every command that writes files also writes ``run.json`` next to them with
the resolved config, seed and library versions.
"""

from __future__ import annotations

import csv
import functools
import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import config as cfgmod
from . import dsp, recipes
from .autograd.checkpoint import load_checkpoint, save_checkpoint
from .datamix import CorpusIndex, Manifest, read_manifest, render_manifest, sample_online, write_manifest
from .embedders.dvector import DVectorConfig, DVectorModel
from .embedders.layered import EmbeddingCache, LayerWeights
from .errors import ConfigError, ContractError, DataError, NumericError, TssError
from .eval import eer, evaluate, read_trials, score_trials
from .separators import (DVectorUpstream, LayeredUpstream, SeparatorConfig, TrainConfig, TssModel, preset,
                         separate)
from .synth import SyntheticCorpus, write_corpus

log = logging.getLogger("enrolltss")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_PARTIAL = 0, 2, 3, 4, 5


def _exit_code(exc: Exception) -> int:
    if isinstance(exc, (ConfigError, ContractError)):
        return EXIT_CONFIG
    if isinstance(exc, DataError):
        return EXIT_DATA
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    return 1


def guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except TssError as exc:
            click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
            sys.exit(_exit_code(exc))
    return wrapper


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Target speaker separation toolkit (desk scale)."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(name)s: %(message)s")


# ---------------------------------------------------------------------------
# shared plumbing


def _out_dir(cfg: dict, override) -> Path:
    out = Path(override or cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def load_corpus(cfg: dict):
    """``(corpus, unseen, names)``: ``corpus[speaker]`` lists signals, ``names[speaker]`` their ids."""
    root = cfg["corpus"]["root"]
    if root:
        index = CorpusIndex.scan(root)
        corpus = {s: [dsp.read_wav(index.root / p) for _, p, _ in index.utterances[s]] for s in index.speakers}
        names = {s: [f"{s}/{u}" for u, _, _ in index.utterances[s]] for s in index.speakers}
        return corpus, None, names
    syn = cfg["corpus"]["synthetic"]
    kw = dict(duration=syn["duration"], seed=syn["seed"], channel=syn["channel"], profile=syn["profile"],
              band_width=syn["band_width"])
    c = SyntheticCorpus(syn["n_speakers"], syn["n_utts"], **kw)
    unseen = None
    if syn["unseen_speakers"]:
        unseen = SyntheticCorpus(syn["unseen_speakers"], syn["n_utts"], first_speaker=100000, **kw).utterances
    names = {s: [f"spk{s:03d}/utt{u:02d}" for u in range(len(v))] for s, v in c.utterances.items()}
    return c.utterances, unseen, names


def split(corpus: dict, held_out: int):
    n = min(len(v) for v in corpus.values())
    if n - held_out < 2:
        raise DataError(f"every speaker needs at least {held_out + 2} utterances ({held_out} held out), "
                        f"smallest has {n}")
    return {s: v[:n - held_out] for s, v in corpus.items()}, {s: v[n - held_out:] for s, v in corpus.items()}


def separator_config(cfg: dict, embedding_dim: int | None = None) -> SeparatorConfig:
    overrides = {k: v for k, v in cfg["separator"].items() if k != "preset"}
    overrides["embedding_source"] = cfg["embedding"]["source"]
    if embedding_dim is not None and overrides.get("embedding_dim") is None:
        overrides["embedding_dim"] = embedding_dim
    sep = preset(cfg["separator"]["preset"], **overrides)
    if sep.level is not None and sep.level != cfg["embedding"]["level"]:
        raise ConfigError(f"config field embedding/level: {sep.conditioning} conditioning consumes {sep.level}-level "
                          f"embeddings, but embedding.level is {cfg['embedding']['level']}")
    return sep


def load_dvector(path) -> DVectorModel:
    state, meta = load_checkpoint(path)
    if "dvector" not in meta:
        raise ConfigError(f"{path}: not a d-vector checkpoint")
    model = DVectorModel(DVectorConfig(**meta["dvector"]), np.random.default_rng(0))
    model.load_state_dict(state)
    return model.eval()


def build_model(cfg: dict, state: dict | None = None) -> tuple[SeparatorConfig, TssModel]:
    emb = cfg["embedding"]
    rng = np.random.default_rng(cfg["seed"])
    upstream, dim = None, None
    if emb["source"] == "dvector":
        if not emb["checkpoint"]:
            raise ConfigError("config field embedding/checkpoint: d-vector source needs a trained embedder checkpoint")
        dv = load_dvector(emb["checkpoint"])
        upstream, dim = DVectorUpstream(dv, emb["level"]), dv.config.emb_dim
    elif emb["source"] == "layered":
        cache = _layered_cache(cfg)
        first = next(iter(sorted(cache.root.glob("*.lyr"))), None)
        if first is None:
            raise DataError(f"{cache.root}: no .lyr files")
        sample = cache.get(first.stem)
        upstream, dim = LayeredUpstream(LayerWeights(sample.shape[0]), emb["level"]), sample.shape[2]
    sep = separator_config(cfg, dim)
    model = TssModel(sep, rng, upstream)
    if state is not None:
        model.load_state_dict(state)
    return sep, model


def _layered_cache(cfg: dict) -> EmbeddingCache:
    d = cfg["embedding"]["layered_dir"]
    if not d:
        raise ConfigError("config field embedding/layered_dir: layered source needs a directory of .lyr files")
    if not Path(d).is_dir():
        raise DataError(f"{d}: layered embedding directory not found")
    return EmbeddingCache(d)


def enroll_factory(cfg: dict, names: dict | None):
    emb = cfg["embedding"]
    frames = emb["enroll_frames"]
    if emb["source"] != "layered":
        return None
    cache = _layered_cache(cfg)

    def for_corpus(_corpus):
        def fn(spk, u):
            return cache.get(names[spk][u])[:, :frames]
        return fn
    return for_corpus


# ---------------------------------------------------------------------------
# commands


@main.command()
def schema():
    """Print the experiment config JSON schema."""
    click.echo(json.dumps(cfgmod.SCHEMA, indent=2))


@main.command()
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option("--speakers", default=20, show_default=True)
@click.option("--utts", default=8, show_default=True)
@click.option("--duration", default=1.0, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--channel", default=1.0, show_default=True, help="Per-utterance channel strength.")
@click.option("--profile", type=click.Choice(["formant", "band"]), default="band", show_default=True)
@click.option("--band-width", default=0.25, show_default=True)
@click.option("--mics", default=0, show_default=True, help="Alternate _micK suffixes over K channels.")
@guarded
def synth(out_dir, speakers, utts, duration, seed, channel, profile, band_width, mics):
    """Write a synthetic corpus as OUT_DIR/spkNNN/uttMM.wav."""
    paths = write_corpus(out_dir, speakers, utts, duration, seed, channel, mics, profile, band_width)
    cfgmod.write_run_json(out_dir, "synth", None, seed, speakers=speakers, utts=utts, duration=duration,
                          channel=channel, profile=profile, band_width=band_width, mics=mics)
    click.echo(f"wrote {len(paths)} utterances under {out_dir}")


@main.command()
@click.argument("in_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option("--fn/--no-fn", default=False, help="Subtract the per-band temporal mean.")
@click.option("--level", type=click.Choice(["frame", "utterance"]), default="frame", show_default=True)
@guarded
def features(in_dir, out_dir, fn, level):
    """Log-mel FBANK features for every WAV under IN_DIR, saved as .npy files."""
    in_dir, out_dir = Path(in_dir), Path(out_dir)
    wavs = sorted(in_dir.rglob("*.wav"))
    if not wavs:
        raise DataError(f"{in_dir}: no .wav files")
    for wav in wavs:
        fm = dsp.logmel(dsp.read_wav(wav))
        fm = dsp.feature_normalize(fm) if fn else fm
        if level == "utterance":
            fm = fm.with_values(dsp.pool_mean_std(fm)[None])
        target = out_dir / wav.relative_to(in_dir).with_suffix(".npy")
        target.parent.mkdir(parents=True, exist_ok=True)
        dsp.save_features(target, fm)
    cfgmod.write_run_json(out_dir, "features", None, None, in_dir=str(in_dir), fn=fn, level=level, files=len(wavs))
    click.echo(f"wrote {len(wavs)} feature files to {out_dir}")


def _train_embedder(cfg: dict, corpus: dict, fn: bool | None = None, out: Path | None = None):
    e = cfg["embedder"]
    fn = cfg["embedding"]["fn"] if fn is None else fn
    train_part, held = split(corpus, cfg["corpus"]["held_out"])
    dcfg = DVectorConfig(len(train_part), hidden=e["hidden"], num_layers=e["num_layers"], emb_dim=e["emb_dim"],
                         objective=e["objective"], margin=e["margin"], scale=e["scale"], fn_enabled=fn)
    run = recipes.train_dvector(train_part, dcfg, e["iterations"], e["peak_lr"], e["batch_size"],
                                e["segment_frames"], cfg["seed"], log_every=max(1, e["iterations"] // 20))
    if out is not None:
        save_checkpoint(out / "dvector.ckpt", run.model.state_dict(),
                        {"dvector": dcfg.to_dict(), "iterations": e["iterations"], "seed": cfg["seed"]})
        with open(out / "loss.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "loss"])
            w.writerows((i, repr(v)) for i, v in run.trace)
    return run, held


def _pairs_for(utts: dict, wanted: int) -> int:
    same = sum(len(v) * (len(v) - 1) // 2 for v in utts.values())
    return max(2, min(wanted, 2 * same))


@main.command("train-embedder")
@click.argument("config_path", type=click.Path())
@click.option("--out", "out_dir", default=None, help="Override output_dir.")
@guarded
def train_embedder(config_path, out_dir):
    """Train a d-vector on the corpus; report EER on held-out utterances."""
    cfg = cfgmod.load(config_path)
    out = _out_dir(cfg, out_dir)
    corpus, unseen, _ = load_corpus(cfg)
    run, held = _train_embedder(cfg, corpus, out=out)
    emb = recipes.dvector_embedder(run.model)
    n = cfg["embedder"]["trial_pairs"]
    result = {"eer_heldout": recipes.verification_eer(held, emb, _pairs_for(held, n), cfg["seed"]),
              "train_seconds": run.seconds}
    if unseen:
        result["eer_unseen"] = recipes.verification_eer(unseen, emb, _pairs_for(unseen, n), cfg["seed"])
    (out / "summary.json").write_text(json.dumps(result, indent=2) + "\n")
    cfgmod.write_run_json(out, "train-embedder", cfg, cfg["seed"], outputs=["dvector.ckpt", "loss.csv", "summary.json"])
    click.echo(json.dumps(result))


def _train_separator(cfg: dict, corpus, unseen, names, out: Path | None, **override):
    cfg = {**cfg, "separator": {**cfg["separator"], **override}}
    sep, model = build_model(cfg)
    t = cfg["train"]
    tc = TrainConfig(iterations=t["iterations"], peak_lr=t["peak_lr"], batch_size=t["batch_size"], seed=cfg["seed"],
                     precision=t["precision"], grad_clip=t["grad_clip"], log_every=t["log_every"],
                     checkpoint_every=t["checkpoint_every"], prefetch=t["prefetch"])
    segment = int(round(t["segment_seconds"] * dsp.SAMPLE_RATE))
    return recipes.separation_experiment(sep, corpus, tc, held_out=cfg["corpus"]["held_out"], segment=segment,
                                         fn=cfg["embedding"]["fn"], enroll_frames=cfg["embedding"]["enroll_frames"],
                                         n_eval=cfg["eval"]["n_examples"], unseen=unseen, out_dir=out, model=model,
                                         enroll_fn_for=enroll_factory(cfg, names))


@main.command("train-separator")
@click.argument("config_path", type=click.Path())
@click.option("--out", "out_dir", default=None, help="Override output_dir.")
@guarded
def train_separator(config_path, out_dir):
    """Train a separator and score it on held-out utterances."""
    cfg = cfgmod.load(config_path)
    out = _out_dir(cfg, out_dir)
    corpus, unseen, names = load_corpus(cfg)
    run = _train_separator(cfg, corpus, unseen, names, out)
    result = {"heldout_si_snri": run.heldout_si_snri, "unseen_si_snri": run.unseen_si_snri,
              "train_seconds": run.seconds}
    (out / "summary.json").write_text(json.dumps(result, indent=2) + "\n")
    cfgmod.write_run_json(out, "train-separator", cfg, cfg["seed"], separator=run.config.to_dict(),
                          outputs=["model.ckpt", "loss.csv", "summary.json"])
    click.echo(json.dumps(result))


@main.command("evaluate")
@click.argument("config_path", type=click.Path())
@click.option("--checkpoint", type=click.Path(), default=None, help="Separator checkpoint.")
@click.option("--model", "kind", type=click.Choice(["checkpoint", "identity", "oracle"]), default="checkpoint",
              show_default=True)
@click.option("--manifest", "manifests", multiple=True, help="Manifest file(s); defaults to eval.manifests.")
@click.option("--out", "out_dir", default=None)
@guarded
def evaluate_cmd(config_path, checkpoint, kind, manifests, out_dir):
    """Separate every manifest record and write one report CSV per manifest."""
    cfg = cfgmod.load(config_path)
    out = _out_dir(cfg, out_dir)
    manifests = list(manifests) or cfg["eval"]["manifests"]
    if not manifests:
        raise ConfigError("config field eval/manifests: no manifest given")
    if kind == "checkpoint":
        if not checkpoint:
            raise ConfigError("--checkpoint is required with --model checkpoint")
        state, meta = load_checkpoint(checkpoint)
        if "separator" not in meta:
            raise ConfigError(f"{checkpoint}: not a separator checkpoint")
        if cfg["embedding"]["source"] == "layered":
            raise ConfigError("embedding/source: layered enrollments are keyed by utterance id and cannot be "
                              "evaluated from manifest audio")
        sep, model = build_model({**cfg, "separator": {"preset": "desk_e3net", **meta["separator"]}}, state)
        emb = cfg["embedding"]

        def separator(mix, enrollment):
            enroll = recipes.enrollment_input(enrollment, sep.embedding_source, sep.level or "utterance", emb["fn"])
            return separate(sep, model, mix, enroll)
    else:
        separator = kind
    status, summary = EXIT_OK, {}
    for m in manifests:
        manifest = read_manifest(m)
        name = Path(m).stem
        tags = {"manifest": name, "embedding": cfg["embedding"]["source"], "level": cfg["embedding"]["level"],
                **cfg["eval"]["tags"]}
        report = evaluate(separator, manifest, out / f"report_{name}.csv", tags, cfg["eval"]["enroll_seconds"])
        summary[name] = {**report.aggregate(), "rows": len(report.rows), "errors": report.n_errors}
        status = max(status, report.status)
    cfgmod.write_run_json(out, "evaluate", cfg, cfg["seed"], checkpoint=checkpoint, model=kind, manifests=manifests)
    click.echo(json.dumps(summary, default=float))
    sys.exit(status)


@main.command("eer")
@click.argument("trials_path", type=click.Path())
@click.option("--root", type=click.Path(), required=True, help="Directory the trial utterance ids resolve against.")
@click.option("--embedder", type=click.Choice(["fbank", "dvector"]), default="fbank", show_default=True)
@click.option("--checkpoint", type=click.Path(), default=None, help="d-vector checkpoint.")
@click.option("--fn/--no-fn", default=False, help="FN for the FBANK embedder.")
@click.option("--out", "out_dir", default=None, help="Write scores.tsv and run.json here.")
@guarded
def eer_cmd(trials_path, root, embedder, checkpoint, fn, out_dir):
    """Cosine-score a trial list and print the EER (percent)."""
    trials = read_trials(trials_path)
    if embedder == "dvector":
        if not checkpoint:
            raise ConfigError("--checkpoint is required for the d-vector embedder")
        embed = recipes.dvector_embedder(load_dvector(checkpoint))
    else:
        embed = recipes.fbank_embedder(fn)
    root = Path(root)

    def by_id(utt):
        p = root / utt
        return embed(dsp.read_wav(p if p.suffix == ".wav" else p.with_suffix(".wav")))

    scores, labels = score_trials(trials, by_id)
    value = eer(scores, labels)
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "scores.tsv", "w") as fh:
            for t, s in zip(trials, scores):
                fh.write(f"{t.utt_a}\t{t.utt_b}\t{t.label}\t{s!r}\n")
        cfgmod.write_run_json(out, "eer", None, None, trials=str(trials_path), root=str(root), embedder=embedder,
                              checkpoint=checkpoint, fn=fn, eer=value)
    click.echo(f"EER {value:.2f}%")


@main.command("manifest")
@click.argument("corpus_root", type=click.Path())
@click.argument("out_path", type=click.Path(dir_okay=False))
@click.option("--n", "n_records", default=100, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--n-enroll", default=1, show_default=True)
@guarded
def manifest_cmd(corpus_root, out_path, n_records, seed, n_enroll):
    """Draw a mixing manifest from CORPUS_ROOT/<speaker>/<utterance>.wav."""
    index = CorpusIndex.scan(corpus_root)
    specs = [sample_online(index, seed, i, n_enroll) for i in range(n_records)]
    write_manifest(out_path, Manifest(specs, Path(corpus_root).resolve(), seed))
    cfgmod.write_run_json(Path(out_path).parent, "manifest", None, seed, corpus=str(corpus_root), n=n_records,
                          n_enroll=n_enroll, output=str(out_path))
    click.echo(f"wrote {n_records} records to {out_path}")


@main.command("mix")
@click.argument("manifest_path", type=click.Path())
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option("--enroll-seconds", type=float, default=None, help="Cut enrollment to this length.")
@guarded
def mix_cmd(manifest_path, out_dir, enroll_seconds):
    """Render every manifest record to NNNNN_{mix,target,enroll}.wav."""
    manifest = read_manifest(manifest_path)
    rows = render_manifest(manifest, out_dir, enroll_seconds)
    cfgmod.write_run_json(out_dir, "mix", None, manifest.seed, manifest=str(manifest_path),
                          enroll_seconds=enroll_seconds, records=len(rows))
    click.echo(f"rendered {len(rows)} records to {out_dir}")


# ---------------------------------------------------------------------------
# recipes

RECIPES = ("fn_ablation", "utt_vs_frame", "freeze_vs_finetune", "embedder_eer")


def _table(rows: list[dict], path: Path) -> str:
    cols = list(rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        w.writerows(rows)
    fmt = lambda v: f"{v:.2f}" if isinstance(v, float) else str(v)  # noqa: E731
    widths = [max(len(c), *(len(fmt(r[c])) for r in rows)) for c in cols]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    lines += ["  ".join(fmt(r[c]).ljust(w) for c, w in zip(cols, widths)) for r in rows]
    return "\n".join(lines)


@main.command("recipe")
@click.argument("name", type=click.Choice(RECIPES))
@click.argument("config_path", type=click.Path())
@click.option("--out", "out_dir", default=None)
@guarded
def recipe_cmd(name, config_path, out_dir):
    """Desk-scale experiment grids; trend-level, not value-level, reproductions.

    \b
    fn_ablation         FBANK and d-vector with and without FN: EER and SI-SNRi
    utt_vs_frame        utterance concat vs frame-level cross-attention
    freeze_vs_finetune  d-vector upstream frozen vs fine-tuned with the separator
    embedder_eer        raw FBANK vs trained d-vector verification EER
    """
    cfg = cfgmod.load(config_path)
    out = _out_dir(cfg, out_dir)
    corpus, unseen, names = load_corpus(cfg)
    n_pairs = cfg["embedder"]["trial_pairs"]
    rows = []
    _, held = split(corpus, cfg["corpus"]["held_out"])
    eval_utts = unseen or held

    def sep_row(label, sub_cfg, **override):
        run = _train_separator(sub_cfg, corpus, unseen, names, out / label, **override)
        return {"heldout_si_snri": run.heldout_si_snri,
                "unseen_si_snri": run.unseen_si_snri if run.unseen_si_snri is not None else float("nan")}

    if name in ("fn_ablation", "embedder_eer"):
        for fn in (False, True):
            if name == "embedder_eer" and fn:
                continue
            e = recipes.verification_eer(eval_utts, recipes.fbank_embedder(fn), _pairs_for(eval_utts, n_pairs),
                                         cfg["seed"])
            row = {"embedding": "fbank", "fn": fn, "eer": e}
            if name == "fn_ablation":
                sub = {**cfg, "embedding": {**cfg["embedding"], "source": "fbank", "fn": fn}}
                row.update(sep_row(f"fbank_fn{int(fn)}", sub))
            rows.append(row)
        for fn in ((False, True) if name == "fn_ablation" else (cfg["embedding"]["fn"],)):
            d_out = out / f"dvector_fn{int(fn)}"
            d_out.mkdir(parents=True, exist_ok=True)
            run, _ = _train_embedder(cfg, corpus, fn, d_out)
            e = recipes.verification_eer(eval_utts, recipes.dvector_embedder(run.model),
                                         _pairs_for(eval_utts, n_pairs), cfg["seed"])
            row = {"embedding": "dvector", "fn": fn, "eer": e}
            if name == "fn_ablation":
                sub = {**cfg, "embedding": {**cfg["embedding"], "source": "dvector", "fn": False,
                                            "checkpoint": str(d_out / "dvector.ckpt")}}
                row.update(sep_row(f"dvector_fn{int(fn)}", sub))
            rows.append(row)
    elif name == "utt_vs_frame":
        for level, cond in (("utterance", "concat"), ("frame", "mca_additive")):
            sub = {**cfg, "embedding": {**cfg["embedding"], "level": level}}
            rows.append({"level": level, "conditioning": cond, **sep_row(f"{level}_{cond}", sub, conditioning=cond)})
    elif name == "freeze_vs_finetune":
        d_out = out / "dvector"
        d_out.mkdir(parents=True, exist_ok=True)
        _train_embedder(cfg, corpus, out=d_out)
        sub = {**cfg, "embedding": {**cfg["embedding"], "source": "dvector",
                                    "checkpoint": str(d_out / "dvector.ckpt")}}
        for ft in (False, True):
            rows.append({"fine_tune_upstream": ft,
                         **sep_row(f"finetune{int(ft)}", sub, fine_tune_upstream=ft)})
    text = _table(rows, out / f"{name}.csv")
    cfgmod.write_run_json(out, f"recipe {name}", cfg, cfg["seed"], outputs=[f"{name}.csv"])
    click.echo(text)


if __name__ == "__main__":
    main()
