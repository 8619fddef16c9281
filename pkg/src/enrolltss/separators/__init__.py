"""Toy-scale separators, the SI-SNR objective and the training loop."""

from .config import PAPER_PEAK_LR, PRESETS, SeparatorConfig, TrainConfig, preset
from .metrics import si_snr, si_snr_loss
from .models import ConvTasNet, E3Net, TssModel, WaveDecoder, WaveEncoder, separate
from .training import Batch, TrainResult, read_trace, train, write_trace
from .upstream import DVectorUpstream, FbankUpstream, LayeredUpstream, Upstream

__all__ = [
    "PAPER_PEAK_LR", "PRESETS", "Batch", "ConvTasNet", "DVectorUpstream", "E3Net", "FbankUpstream",
    "LayeredUpstream", "SeparatorConfig", "TrainConfig", "TrainResult", "TssModel", "Upstream", "WaveDecoder",
    "WaveEncoder", "preset", "read_trace", "separate", "si_snr", "si_snr_loss", "train", "write_trace",
]
