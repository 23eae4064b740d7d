"""
Harmonic-percussive-residual decomposition with binary masks.

The magnitude spectrogram is median-smoothed along time (harmonic estimate) and
along frequency (percussive estimate). A bin is harmonic when the harmonic estimate
exceeds ``beta`` times the percussive one, percussive in the mirrored case, and
residual otherwise. The three masks partition every bin, so the components sum
back to the source up to the inverse STFT's rounding.
"""

from dataclasses import dataclass

import numpy as np

from src.dsp.filters import median_filter_freq, median_filter_time
from src.dsp.spectral import overlap_add, stft_array
from src.models.audio import AudioClip, HprComponents, StftConfig
from src.models.base import ValidationError
from src.utils.logging import get_logger, log_function_call

logger = get_logger(__name__)

DEFAULT_HPR_STFT = StftConfig(window_len=1024, hop=256, fft_len=1024)


@dataclass(frozen=True)
class HprMasks:
    """Binary masks laid out [frame][bin]."""
    harmonic: np.ndarray
    percussive: np.ndarray
    residual: np.ndarray


def hpr_masks(mag: np.ndarray, t_len: int, f_len: int, beta: float) -> HprMasks:
    """
    Binary masks from a [frame][bin] magnitude matrix.

    Raises:
        ValidationError: beta < 1 or even filter lengths
    """
    if beta < 1:
        raise ValidationError(f"beta must be >= 1, got {beta}", "beta")
    by_bin = mag.T
    harm = median_filter_time(by_bin, t_len).T
    perc = median_filter_freq(by_bin, f_len).T
    mh = harm > beta * perc
    mp = (perc >= beta * harm) & ~mh
    mr = ~(mh | mp)
    return HprMasks(mh, mp, mr)


@log_function_call
def hpr_decompose(clip: AudioClip, cfg: StftConfig = DEFAULT_HPR_STFT, t_len: int = 17,
                  f_len: int = 17, beta: float = 2.0) -> HprComponents:
    """
    Split ``clip`` into harmonic, percussive and residual clips.

    Args:
        clip: Source clip (at least one window long)
        cfg: STFT framing
        t_len: Time-direction median length (odd, frames)
        f_len: Frequency-direction median length (odd, bins)
        beta: Separation factor (>= 1)

    Returns:
        HprComponents sharing the source's rate and length
    """
    frames = stft_array(clip.as_float64(), cfg)
    masks = hpr_masks(np.abs(frames), t_len, f_len, beta)
    parts = [overlap_add(frames * m, cfg, len(clip))
             for m in (masks.harmonic, masks.percussive, masks.residual)]
    return HprComponents(*(AudioClip(p, clip.sample_rate) for p in parts))


def energy_fractions(components: HprComponents) -> dict:
    """Share of total component energy carried by each component."""
    energies = {name: float(np.sum(c.as_float64() ** 2))
                for name, c in zip(('harmonic', 'percussive', 'residual'), components.as_tuple())}
    total = sum(energies.values()) or 1.0
    return {name: e / total for name, e in energies.items()}
