from __future__ import annotations

import numpy as np

from .. import dsp
from ..errors import InputError
from .base import EnrollmentEmbedding


def fbank_embed(signal, level: str = "utterance", config: dsp.FbankConfig = dsp.DEFAULT_FBANK,
                fn: bool = False) -> EnrollmentEmbedding:
    """FBANK enrollment embedding.

    Utterance level pools the log-mel frames into per-band mean and standard
    deviation (160 dims for 80 bands); frame level returns the frames as is.
    """
    feats = dsp.logmel(signal, config)
    if fn:
        feats = dsp.feature_normalize(feats)
    if level == "frame":
        return EnrollmentEmbedding("frame", feats.values, "fbank")
    if level != "utterance":
        raise ValueError(f"level must be 'utterance' or 'frame', got {level!r}")
    if feats.num_frames < 2:
        raise InputError(f"utterance-level FBANK needs at least 2 frames, got {feats.num_frames}")
    return EnrollmentEmbedding("utterance", dsp.pool_mean_std(feats), "fbank")
