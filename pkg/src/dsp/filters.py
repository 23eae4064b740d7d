"""
Filtering kernels: median smoothing of magnitude spectrograms, linear-phase low-pass
degradation and Kaiser-windowed-sinc polyphase resampling.

Magnitude matrices passed to the median filters are laid out [bin][frame]: the time
filter slides along each row, the frequency filter along each column. Both pad by
replicating the boundary values.
"""

import math

import numpy as np
from scipy.ndimage import median_filter
from scipy.signal import firwin, resample_poly

from src.models.audio import AudioClip, ResampleSpec
from src.models.base import ValidationError
from src.utils.logging import get_logger

logger = get_logger(__name__)

DEFAULT_LOWPASS_TAPS = 255
DEFAULT_LOWPASS_BETA = 8.0


def _check_median_length(length: int) -> None:
    if length < 3 or length % 2 == 0:
        raise ValidationError(f"median length must be odd and >= 3, got {length}", "length")


def median_filter_time(mag: np.ndarray, length: int) -> np.ndarray:
    """Sliding median across frames for every bin (horizontal, harmonic-enhancing)."""
    _check_median_length(length)
    mag = np.atleast_2d(np.asarray(mag, dtype=np.float64))
    return median_filter(mag, size=(1, length), mode='nearest')


def median_filter_freq(mag: np.ndarray, length: int) -> np.ndarray:
    """Sliding median across bins for every frame (vertical, percussive-enhancing)."""
    _check_median_length(length)
    mag = np.asarray(mag, dtype=np.float64)
    if mag.ndim == 1:
        mag = mag[:, None]
    return median_filter(mag, size=(length, 1), mode='nearest')


def lowpass_kernel(rate: int, cutoff_hz: float, taps: int = DEFAULT_LOWPASS_TAPS,
                   beta: float = DEFAULT_LOWPASS_BETA) -> np.ndarray:
    """Type-I linear-phase Kaiser FIR with unit DC gain."""
    if not 0 < cutoff_hz < rate / 2:
        raise ValidationError(f"cutoff {cutoff_hz} Hz must lie below Nyquist ({rate / 2} Hz)", "cutoff_hz")
    if taps < 3 or taps % 2 == 0:
        raise ValidationError(f"taps must be odd and >= 3, got {taps}", "taps")
    return firwin(taps, cutoff_hz, window=('kaiser', beta), fs=rate)


def lowpass(clip: AudioClip, cutoff_hz: float, taps: int = DEFAULT_LOWPASS_TAPS,
            beta: float = DEFAULT_LOWPASS_BETA) -> AudioClip:
    """
    Low-pass ``clip`` with a group-delay-compensated linear-phase FIR.

    Edges are extended by replication so constant signals pass unchanged.

    Raises:
        ValidationError: cutoff at or above Nyquist
    """
    kernel = lowpass_kernel(clip.sample_rate, cutoff_hz, taps, beta)
    delay = (taps - 1) // 2
    padded = np.pad(clip.as_float64(), (delay, delay), mode='edge')
    return clip.with_samples(np.convolve(padded, kernel, mode='valid'))


def _kaiser_attenuation(beta: float) -> float:
    """Invert the Kaiser design rule beta = 0.1102 (A - 8.7) for A > 50 dB."""
    return beta / 0.1102 + 8.7


def resample_kernel(up: int, down: int, spec: ResampleSpec) -> np.ndarray:
    """
    Prototype low-pass for ``resample_poly`` at the upsampled rate.

    ``taps_per_phase`` zero crossings are kept on each side of the sinc; the
    passband edge sits at ``cutoff_frac`` of the lower of the two Nyquist rates
    and the transition band is placed above it.
    """
    max_rate = max(up, down)
    numtaps = 2 * spec.taps_per_phase * max_rate + 1
    # normalized to the Nyquist of the upsampled rate
    passband = spec.cutoff_frac / max_rate
    attenuation = _kaiser_attenuation(spec.kaiser_beta)
    transition = (attenuation - 7.95) / (14.36 * numtaps) * 2.0
    cutoff = min(passband + transition / 2, 1.0 / max_rate)
    return firwin(numtaps, cutoff, window=('kaiser', spec.kaiser_beta))


def resample(clip: AudioClip, target_rate: int, spec: ResampleSpec = None) -> AudioClip:
    """
    Polyphase resampling to ``target_rate``; output length is
    ``round(len * target / source)``. Equal rates return the samples untouched.

    Raises:
        ValidationError: non-positive target rate
    """
    spec = spec or ResampleSpec()
    target_rate = int(target_rate)
    if target_rate <= 0:
        raise ValidationError(f"target rate must be positive, got {target_rate}", "target_rate")
    if target_rate == clip.sample_rate:
        return AudioClip(clip.samples.copy(), clip.sample_rate)

    g = math.gcd(target_rate, clip.sample_rate)
    up, down = target_rate // g, clip.sample_rate // g
    kernel = resample_kernel(up, down, spec)
    out = resample_poly(clip.as_float64(), up, down, window=kernel)

    n_out = int(round(len(clip) * target_rate / clip.sample_rate))
    if out.size < n_out:
        out = np.pad(out, (0, n_out - out.size))
    return AudioClip(out[:n_out], target_rate)


def resample_array(x: np.ndarray, source_rate: int, target_rate: int,
                   spec: ResampleSpec = None) -> np.ndarray:
    """Array-level convenience wrapper around ``resample``."""
    return resample(AudioClip(x, source_rate), target_rate, spec).as_float64()
