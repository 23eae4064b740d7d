"""
Synthetic clip generator for the desk-scale corpus.

Three families are produced:
- monophonic: one harmonic source with geometrically decaying partials
- polyphonic: a superposition of several independent harmonic voices
- percussive: click trains shaped by short decaying noise bursts

Every clip is normalized to its ``SynthSpec.peak`` amplitude and is a pure function of
its ``SynthSpec`` and random generator, so rebuilding with the same seed
reproduces the corpus bit for bit.
"""

from typing import Optional

import numpy as np
from scipy.signal import fftconvolve

from src.models.audio import AudioClip
from src.models.dataset import SynthSpec
from src.utils.logging import get_logger

logger = get_logger(__name__)


def _time_axis(spec: SynthSpec) -> np.ndarray:
    return np.arange(spec.n_samples, dtype=np.float64) / spec.sample_rate


def _jitter(rng: np.random.Generator, spec: SynthSpec, size: int) -> np.ndarray:
    return 1.0 + spec.amplitude_jitter * rng.uniform(-1.0, 1.0, size=size)


def harmonic_voice(spec: SynthSpec, rng: np.random.Generator, f0: Optional[float] = None) -> np.ndarray:
    """
    One harmonic source: ``sum_k a_k sin(2 pi k f0 t + phi_k)`` with ``a_k ~ decay**(k-1)``.

    Args:
        spec: Clip family parameters
        rng: Random generator (f0, phases and amplitude jitter)
        f0: Fundamental in Hz; drawn log-uniformly from ``[f0_min, f0_max]`` when omitted
    """
    if f0 is None:
        f0 = float(np.exp(rng.uniform(np.log(spec.f0_min), np.log(spec.f0_max))))
    t = _time_axis(spec)
    k = np.arange(1, spec.n_partials + 1, dtype=np.float64)
    amps = spec.partial_decay ** (k - 1) * _jitter(rng, spec, spec.n_partials)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=spec.n_partials)
    return (amps[:, None] * np.sin(2.0 * np.pi * f0 * k[:, None] * t[None, :] + phases[:, None])).sum(axis=0)


def click_times(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """Click onsets in samples, periodic with a random offset or a Poisson process."""
    if spec.click_mode == 'periodic':
        period = 1.0 / spec.click_rate
        times = np.arange(rng.uniform(0.0, period), spec.duration, period)
    else:
        gaps = rng.exponential(1.0 / spec.click_rate, size=int(spec.duration * spec.click_rate * 3) + 8)
        times = np.cumsum(gaps)
        times = times[times < spec.duration]
    return np.minimum((times * spec.sample_rate).astype(np.int64), spec.n_samples - 1)


def noise_burst(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    n = max(1, int(round(spec.burst_ms * spec.sample_rate / 1000.0)))
    envelope = np.exp(-5.0 * np.arange(n) / n)
    return rng.standard_normal(n) * envelope


def percussive_signal(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    impulses = np.zeros(spec.n_samples)
    onsets = click_times(spec, rng)
    impulses[onsets] = _jitter(rng, spec, onsets.size)
    return fftconvolve(impulses, noise_burst(spec, rng))[:spec.n_samples]


def _normalize(x: np.ndarray, peak: float) -> np.ndarray:
    top = float(np.max(np.abs(x)))
    return x if top == 0.0 else x * (peak / top)


def synth_clip(spec: SynthSpec, rng: np.random.Generator) -> AudioClip:
    """
    Generate one clip of ``spec.kind``.

    Returns:
        AudioClip at ``spec.sample_rate`` with peak amplitude ``spec.peak``
    """
    if spec.kind == 'monophonic':
        x = harmonic_voice(spec, rng)
    elif spec.kind == 'polyphonic':
        x = sum(harmonic_voice(spec, rng) for _ in range(spec.n_voices))
    else:
        x = percussive_signal(spec, rng)
    # float32 storage must not push the peak above the target
    return AudioClip(_normalize(x, spec.peak) * (1.0 - 1e-7), spec.sample_rate)
