from __future__ import annotations

import numpy as np

from ..autograd import Tensor, ops
from ..errors import MetricError

CLAMP_DB = 60.0
# values are reported on a 1e-9 dB grid so that rescaling an input, which
# perturbs the float result by ~1e-15 dB, gives the identical number
GRID_DECIMALS = 9


def si_snr(est, ref) -> float:
    """Scale-invariant SNR in dB after zero-meaning both signals, clamped to +-60 dB.

    ``alpha = <est, ref> / |ref|^2``, target ``alpha * ref``, error
    ``est - target``; the result is ``10 log10(|target|^2 / |error|^2)``.
    """
    est = np.asarray(est, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if est.shape != ref.shape or est.ndim != 1:
        raise MetricError(f"si_snr needs equal-length 1-D signals, got {est.shape} and {ref.shape}")
    est = est - est.mean()
    ref = ref - ref.mean()
    ref_energy = ref @ ref
    if ref_energy == 0.0:
        raise MetricError("si_snr: reference is zero after mean removal")
    target = (est @ ref / ref_energy) * ref
    noise = est - target
    t_energy, n_energy = target @ target, noise @ noise
    if n_energy == 0.0:
        return CLAMP_DB
    if t_energy == 0.0:
        return -CLAMP_DB
    value = float(np.clip(10.0 * np.log10(t_energy / n_energy), -CLAMP_DB, CLAMP_DB))
    return round(value, GRID_DECIMALS)


def si_snr_loss(est: Tensor, ref, eps: float = 1e-8) -> Tensor:
    """Mean negative SI-SNR over the batch (unclamped, eps-stabilised); ``est`` is ``[batch, n]``."""
    ref = np.asarray(ref, dtype=est.dtype)
    if ref.shape != est.shape:
        raise MetricError(f"si_snr_loss: estimate {est.shape} vs reference {ref.shape}")
    ref = ref - ref.mean(axis=-1, keepdims=True)
    est = est - ops.mean(est, axis=-1, keepdims=True)
    alpha = ops.sum(est * ref, axis=-1, keepdims=True) / (float(eps) + (ref * ref).sum(axis=-1, keepdims=True))
    target = alpha * ref
    noise = est - target
    ratio = (ops.sum(target * target, axis=-1) + eps) / (ops.sum(noise * noise, axis=-1) + eps)
    return -ops.mean(ops.log(ratio)) * (10.0 / np.log(10.0))
