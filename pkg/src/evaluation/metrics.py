"""
Objective reconstruction metrics: multiscale mel and STFT distances, waveform L1
and SI-SDR.

All metrics operate on float64 arrays (clips are promoted on entry) so reports are
reproducible bit-for-bit.
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import List, Tuple, Union

import numpy as np

from src.dsp.spectral import mel_filterbank, stft_array
from src.models.audio import AudioClip, StftConfig
from src.models.base import BaseModel, ValidationError
from src.utils.logging import get_logger

logger = get_logger(__name__)

LOG_EPS = 1e-5
SI_SDR_CAP = 100.0

Signal = Union[AudioClip, np.ndarray]


@dataclass(frozen=True)
class MultiScaleSpec(BaseModel):
    """Window lengths for the STFT distance and (window, n_mels) pairs for the mel distance."""
    stft_windows: Tuple[int, ...] = (2048, 512)
    mel_windows: Tuple[Tuple[int, int], ...] = (
        (32, 5), (64, 10), (128, 20), (256, 40), (512, 80), (1024, 160), (2048, 320))

    def __post_init__(self):
        object.__setattr__(self, 'stft_windows', tuple(int(w) for w in self.stft_windows))
        object.__setattr__(self, 'mel_windows', tuple((int(w), int(m)) for w, m in self.mel_windows))
        self.check()

    def _validate_fields(self):
        if not self.stft_windows or not self.mel_windows:
            raise ValidationError("scale lists must be non-empty", "stft_windows/mel_windows")
        for w in list(self.stft_windows) + [w for w, _ in self.mel_windows]:
            if w < 4 or w & (w - 1):
                raise ValidationError(f"window {w} is not a power of two >= 4", "windows")

    def _validate_business_rules(self):
        pass

    @staticmethod
    def scale_config(window: int) -> StftConfig:
        return StftConfig(window_len=window, hop=window // 4, fft_len=window)


def _as_array(x: Signal) -> np.ndarray:
    if isinstance(x, AudioClip):
        return x.as_float64()
    return np.asarray(x, dtype=np.float64).reshape(-1)


def _check_pair(ref: Signal, est: Signal) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(ref, AudioClip) and isinstance(est, AudioClip) and ref.sample_rate != est.sample_rate:
        raise ValidationError(
            f"sample rate mismatch: {ref.sample_rate} vs {est.sample_rate}", "sample_rate")
    r, e = _as_array(ref), _as_array(est)
    if r.shape != e.shape:
        raise ValidationError(f"length mismatch: {r.size} vs {e.size}", "length")
    return r, e


def _rate_of(*signals: Signal, default: int = None) -> int:
    for s in signals:
        if isinstance(s, AudioClip):
            return s.sample_rate
    if default is None:
        raise ValidationError("sample rate required for array inputs", "rate")
    return default


@lru_cache(maxsize=64)
def _cached_filterbank(window: int, n_mels: int, rate: int) -> np.ndarray:
    fb = mel_filterbank(window, n_mels, rate)
    fb.setflags(write=False)
    return fb


def _usable(windows: List[int], length: int) -> List[int]:
    kept = [w for w in windows if w <= length]
    if not kept:
        raise ValidationError(f"clip of {length} samples is shorter than every scale", "length")
    return kept


def log_mel(x: np.ndarray, window: int, n_mels: int, rate: int) -> np.ndarray:
    power = np.abs(stft_array(x, MultiScaleSpec.scale_config(window))) ** 2
    return np.log(power @ _cached_filterbank(window, n_mels, rate).T + LOG_EPS)


def log_magnitude(x: np.ndarray, window: int) -> np.ndarray:
    return np.log(np.abs(stft_array(x, MultiScaleSpec.scale_config(window))) + LOG_EPS)


def mel_distance(ref: Signal, est: Signal, spec: MultiScaleSpec = None, rate: int = None) -> float:
    """
    Mean over scales of the mean absolute log-mel-power difference.

    Raises:
        ValidationError: length or rate mismatch
    """
    spec = spec or MultiScaleSpec()
    r, e = _check_pair(ref, est)
    rate = _rate_of(ref, est, default=rate)
    by_window = dict(spec.mel_windows)
    windows = _usable([w for w, _ in spec.mel_windows], r.size)
    terms = [np.mean(np.abs(log_mel(r, w, by_window[w], rate) - log_mel(e, w, by_window[w], rate)))
             for w in windows]
    return float(np.mean(terms))


def stft_distance(ref: Signal, est: Signal, spec: MultiScaleSpec = None) -> float:
    """Mean over scales of the mean absolute log-magnitude difference."""
    spec = spec or MultiScaleSpec()
    r, e = _check_pair(ref, est)
    windows = _usable(list(spec.stft_windows), r.size)
    terms = [np.mean(np.abs(log_magnitude(r, w) - log_magnitude(e, w))) for w in windows]
    return float(np.mean(terms))


def waveform_l1(ref: Signal, est: Signal) -> float:
    """Mean absolute sample difference."""
    r, e = _check_pair(ref, est)
    return float(np.mean(np.abs(r - e)))


def si_sdr(ref: Signal, est: Signal) -> float:
    """
    Scale-invariant signal-to-distortion ratio in dB, clamped to [-100, +100].
    A silent estimate scores the floor.

    Raises:
        ValidationError: all-zero reference
    """
    r, e = _check_pair(ref, est)
    ref_energy = float(np.dot(r, r))
    if ref_energy == 0.0:
        raise ValidationError("zero reference", "ref")
    if float(np.dot(e, e)) == 0.0:
        return -SI_SDR_CAP
    alpha = float(np.dot(e, r)) / ref_energy
    target = alpha * r
    noise = target - e
    num = float(np.dot(target, target))
    den = float(np.dot(noise, noise))
    if den <= num * 10 ** (-SI_SDR_CAP / 10):
        return SI_SDR_CAP
    if num <= den * 10 ** (-SI_SDR_CAP / 10):
        return -SI_SDR_CAP
    return float(10 * np.log10(num / den))


@dataclass
class MetricValues:
    """One row of the per-clip report."""
    mel: float
    stft: float
    waveform_l1: float
    si_sdr: float

    def as_dict(self) -> dict:
        return {'mel': self.mel, 'stft': self.stft, 'waveform_l1': self.waveform_l1,
                'si_sdr': self.si_sdr}


METRIC_NAMES = ('mel', 'stft', 'waveform_l1', 'si_sdr')


def compute_all(ref: np.ndarray, est: np.ndarray, rate: int,
                spec: MultiScaleSpec = None) -> MetricValues:
    """All four metrics on aligned float64 arrays (silent references handled)."""
    spec = spec or MultiScaleSpec()
    ref_silent = not np.any(ref)
    if ref_silent:
        sdr = SI_SDR_CAP if not np.any(est) else -SI_SDR_CAP
    else:
        sdr = si_sdr(ref, est)
    return MetricValues(
        mel=mel_distance(ref, est, spec, rate=rate),
        stft=stft_distance(ref, est, spec),
        waveform_l1=waveform_l1(ref, est),
        si_sdr=sdr,
    )

