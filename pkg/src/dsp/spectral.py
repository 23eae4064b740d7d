"""
Short-time Fourier analysis and synthesis, and the mel filterbank.

Framing convention: the signal is extended on both sides by replicating its edge
samples (``window_len - hop`` on the left, enough on the right to complete the last
frame plus the same margin), so every source sample is covered by the same number of
frames. ``istft`` divides the overlap-added frames by the summed squared window and
crops back to the source length, which makes ``istft(stft(x))`` exact for any
``hop <= window_len / 2``.
"""

import math
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

from src.models.audio import AudioClip, Spectrogram, StftConfig
from src.models.base import ValidationError
from src.utils.logging import get_logger

logger = get_logger(__name__)


@lru_cache(maxsize=32)
def hann_window(window_len: int) -> np.ndarray:
    """Periodic Hann window in double precision (read-only, cached)."""
    w = get_window('hann', window_len, fftbins=True).astype(np.float64)
    w.setflags(write=False)
    return w


def frame_layout(length: int, cfg: StftConfig):
    """
    Compute (left_pad, right_pad, n_frames) for a signal of ``length`` samples.

    The frame count is ``ceil((L - window_len) / hop) + 1`` on the padded length L.
    """
    left = cfg.window_len - cfg.hop
    padded = length + 2 * left
    n_frames = int(math.ceil((padded - cfg.window_len) / cfg.hop)) + 1
    total = (n_frames - 1) * cfg.hop + cfg.window_len
    right = total - length - left
    return left, right, n_frames


def stft_array(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """STFT of a 1-D float64 array; returns complex frames [frame][bin]."""
    x = np.asarray(x, dtype=np.float64)
    if x.size < cfg.window_len:
        raise ValidationError(
            f"input too short: {x.size} samples < window of {cfg.window_len}", "samples")
    left, right, n_frames = frame_layout(x.size, cfg)
    padded = np.pad(x, (left, right), mode='edge')
    frames = sliding_window_view(padded, cfg.window_len)[::cfg.hop][:n_frames]
    return np.fft.rfft(frames * hann_window(cfg.window_len), n=cfg.fft_len, axis=-1)


def overlap_add(frames: np.ndarray, cfg: StftConfig, length: int) -> np.ndarray:
    """Weighted overlap-add inverse of ``stft_array``; returns float64 samples."""
    if not cfg.satisfies_cola:
        raise ValidationError(
            f"non-COLA hop: hop {cfg.hop} exceeds half the window ({cfg.window_len})", "hop")
    left, right, n_frames = frame_layout(length, cfg)
    if frames.shape[0] != n_frames:
        raise ValidationError(
            f"expected {n_frames} frames for length {length}, got {frames.shape[0]}", "frames")

    window = hann_window(cfg.window_len)
    segments = np.fft.irfft(frames, n=cfg.fft_len, axis=-1)[:, :cfg.window_len] * window
    total = left + length + right
    out = np.zeros(total, dtype=np.float64)
    norm = np.zeros(total, dtype=np.float64)
    w2 = window ** 2
    for i in range(n_frames):
        start = i * cfg.hop
        out[start:start + cfg.window_len] += segments[i]
        norm[start:start + cfg.window_len] += w2
    core = slice(left, left + length)
    return out[core] / norm[core]


def stft(clip: AudioClip, cfg: StftConfig) -> Spectrogram:
    """
    Windowed DFT of every frame of ``clip``.

    Raises:
        ValidationError: clip shorter than one window ("input too short")
    """
    frames = stft_array(clip.as_float64(), cfg)
    return Spectrogram(frames, cfg, clip.sample_rate, len(clip))


def istft(spec: Spectrogram, cfg: StftConfig = None) -> AudioClip:
    """
    Inverse of ``stft``.

    Raises:
        ValidationError: hop larger than half the window, or mismatched config
    """
    cfg = cfg or spec.config
    if cfg != spec.config:
        raise ValidationError("istft config differs from the analysing config", "config")
    return AudioClip(overlap_add(spec.frames, cfg, spec.length), spec.origin_rate)


def hz_to_mel(freq):
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    freq = np.asarray(freq, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = math.log(6.4) / 27.0
    mels = freq / f_sp
    return np.where(freq >= min_log_hz,
                    min_log_mel + np.log(np.maximum(freq, 1e-12) / min_log_hz) / logstep,
                    mels)


def mel_to_hz(mels):
    mels = np.asarray(mels, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = math.log(6.4) / 27.0
    return np.where(mels >= min_log_mel,
                    min_log_hz * np.exp(logstep * (mels - min_log_mel)),
                    f_sp * mels)


def mel_filterbank(fft_len: int, n_mels: int, rate: int, fmin: float = 0.0,
                   fmax: float = None) -> np.ndarray:
    """
    Area-normalized triangular filters on the Slaney mel scale, shape [n_mels][bins].

    Raises:
        ValidationError: bad frequency range, or more filters than usable bins
    """
    fmax = rate / 2 if fmax is None else fmax
    if not 0 <= fmin < fmax <= rate / 2:
        raise ValidationError(f"need 0 <= fmin < fmax <= {rate / 2}, got [{fmin}, {fmax}]", "fmax")
    n_bins = fft_len // 2 + 1
    fft_freqs = np.linspace(0, rate / 2, n_bins)
    usable = int(np.count_nonzero((fft_freqs >= fmin) & (fft_freqs <= fmax)))
    if n_mels < 1 or n_mels > usable:
        raise ValidationError(f"n_mels={n_mels} exceeds {usable} usable bins", "n_mels")

    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    widths = np.diff(edges)
    ramps = edges[:, None] - fft_freqs[None, :]
    lower = -ramps[:-2] / widths[:-1, None]
    upper = ramps[2:] / widths[1:, None]
    weights = np.maximum(0.0, np.minimum(lower, upper))
    weights *= (2.0 / (edges[2:] - edges[:-2]))[:, None]

    empty = np.flatnonzero(weights.sum(axis=1) <= 0)
    if empty.size:
        logger.debug(f"mel filterbank: {empty.size} empty filters (fft_len={fft_len}, n_mels={n_mels})")
    return weights


def mel_centers(n_mels: int, rate: int, fmin: float = 0.0, fmax: float = None) -> np.ndarray:
    """Center frequency (Hz) of every filter produced by ``mel_filterbank``."""
    fmax = rate / 2 if fmax is None else fmax
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))[1:-1]
