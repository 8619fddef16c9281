"""Experiment configuration: schema, loading, defaults and provenance.

An experiment is one YAML or JSON document. Unknown keys are errors. The
schema below is the reference for every key; ``enrolltss schema`` prints it.
The environment variable ``ENROLLTSS_CORPUS_ROOT`` replaces ``corpus.root``.
"""

from __future__ import annotations

import copy
import json
import os
import platform
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from . import __version__
from .errors import ConfigError

CORPUS_ROOT_ENV = "ENROLLTSS_CORPUS_ROOT"

_num = {"type": "number"}
_pos_int = {"type": "integer", "minimum": 1}
_str_or_null = {"type": ["string", "null"]}

SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "enrolltss experiment",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
        "corpus": {
            "type": "object",
            "additionalProperties": False,
            "description": "root/<speaker>/<utterance>.wav, or a synthetic corpus when root is null",
            "properties": {
                "root": _str_or_null,
                "held_out": {"type": "integer", "minimum": 2},
                "synthetic": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "n_speakers": {"type": "integer", "minimum": 2},
                        "n_utts": {"type": "integer", "minimum": 4},
                        "duration": {"type": "number", "exclusiveMinimum": 0.05},
                        "seed": {"type": "integer", "minimum": 0},
                        "channel": {"type": "number", "minimum": 0},
                        "profile": {"enum": ["formant", "band"]},
                        "band_width": {"type": "number", "exclusiveMinimum": 0},
                        "unseen_speakers": {"type": "integer", "minimum": 0},
                    },
                },
            },
        },
        "embedding": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "source": {"enum": ["fbank", "dvector", "layered"]},
                "level": {"enum": ["utterance", "frame"]},
                "fn": {"type": "boolean"},
                "checkpoint": _str_or_null,
                "layered_dir": _str_or_null,
                "enroll_frames": _pos_int,
            },
        },
        "embedder": {
            "type": "object",
            "additionalProperties": False,
            "description": "d-vector training",
            "properties": {
                "hidden": _pos_int,
                "num_layers": _pos_int,
                "emb_dim": _pos_int,
                "objective": {"enum": ["cross_entropy", "aam_softmax"]},
                "margin": _num,
                "scale": _num,
                "iterations": _pos_int,
                "peak_lr": {"type": "number", "exclusiveMinimum": 0},
                "batch_size": _pos_int,
                "segment_frames": _pos_int,
                "trial_pairs": {"type": "integer", "minimum": 2},
            },
        },
        "separator": {
            "type": "object",
            "description": "preset name plus any SeparatorConfig field as an override",
            "properties": {
                "preset": {"type": "string"},
                "family": {"enum": ["e3net", "convtasnet"]},
                "conditioning": {"enum": ["concat", "film_utt", "mca_additive", "mca_film", "none"]},
                "head": {"enum": ["direct", "mask", None]},
                "fine_tune_upstream": {"type": "boolean"},
                "embedding_dim": {"type": ["integer", "null"], "minimum": 1},
                "adapter_bn": {"type": "boolean"},
                "L": _num, "S": _num,
                "N": _pos_int, "B": _pos_int, "R": _pos_int, "X": _pos_int,
                "cond_dim": _pos_int, "adapter_hidden": _pos_int, "hidden": {"type": ["integer", "null"]},
                "width_multiplier": _num, "kernel": _pos_int, "mca_heads": _pos_int, "mca_d_model": _pos_int,
            },
            "additionalProperties": False,
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "iterations": _pos_int,
                "peak_lr": {"type": "number", "exclusiveMinimum": 0},
                "batch_size": _pos_int,
                "precision": {"enum": ["float32", "float64"]},
                "grad_clip": _num,
                "log_every": _pos_int,
                "checkpoint_every": {"type": "integer", "minimum": 0},
                "prefetch": {"type": "integer", "minimum": 0},
                "segment_seconds": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "eval": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "manifests": {"type": "array", "items": {"type": "string"}},
                "trials": _str_or_null,
                "n_examples": _pos_int,
                "enroll_seconds": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "tags": {"type": "object", "additionalProperties": {"type": "string"}},
            },
        },
    },
}

DEFAULTS = {
    "name": "experiment",
    "seed": 0,
    "output_dir": "runs/experiment",
    "corpus": {
        "root": None,
        "held_out": 2,
        "synthetic": {"n_speakers": 100, "n_utts": 8, "duration": 1.0, "seed": 0, "channel": 1.0,
                      "profile": "band", "band_width": 0.25, "unseen_speakers": 10},
    },
    "embedding": {"source": "fbank", "level": "utterance", "fn": False, "checkpoint": None, "layered_dir": None,
                  "enroll_frames": 48},
    "embedder": {"hidden": 64, "num_layers": 3, "emb_dim": 256, "objective": "cross_entropy", "margin": 0.2,
                 "scale": 30.0, "iterations": 1500, "peak_lr": 3e-3, "batch_size": 16, "segment_frames": 60,
                 "trial_pairs": 1000},
    "separator": {"preset": "desk_e3net"},
    "train": {"iterations": 5000, "peak_lr": 1e-3, "batch_size": 8, "precision": "float32", "grad_clip": 5.0,
              "log_every": 100, "checkpoint_every": 0, "prefetch": 0, "segment_seconds": 0.5},
    "eval": {"manifests": [], "trials": None, "n_examples": 300, "enroll_seconds": None, "tags": {}},
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else copy.deepcopy(v)
    return out


def validate(doc: dict) -> None:
    """Raise ConfigError naming the offending field path."""
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"config field {where}: {e.message}")


def resolve(doc: dict | None = None, env: dict | None = None) -> dict:
    """Validate a user document and fill in defaults and environment overrides."""
    doc = doc or {}
    validate(doc)
    cfg = _merge(DEFAULTS, doc)
    env = os.environ if env is None else env
    if env.get(CORPUS_ROOT_ENV):
        cfg["corpus"]["root"] = env[CORPUS_ROOT_ENV]
    validate(cfg)
    return cfg


def load(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: config file not found")
    text = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"{path}: cannot parse config ({exc})") from None
    if doc is not None and not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a mapping at the top level")
    return resolve(doc)


def provenance(command: str, config: dict | None = None, seed: int | None = None, **extra) -> dict:
    from .autograd import kernels
    return {
        "command": command,
        "config": config,
        "seed": seed,
        "versions": {"enrolltss": __version__, "python": sys.version.split()[0], "numpy": np.__version__,
                     "platform": platform.platform(), "lstm_backend": kernels.BACKEND},
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        **extra,
    }


def write_run_json(out_dir, command: str, config: dict | None = None, seed: int | None = None, **extra) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "run.json"
    path.write_text(json.dumps(provenance(command, config, seed, **extra), indent=2, sort_keys=True, default=str)
                    + "\n", encoding="utf-8")
    return path
