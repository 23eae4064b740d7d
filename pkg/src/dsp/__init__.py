"""
Signal-core: deterministic DSP kernels used throughout the codec pipeline.
"""

from src.dsp.filters import lowpass, median_filter_freq, median_filter_time, resample
from src.dsp.hpr import hpr_decompose
from src.dsp.spectral import istft, mel_filterbank, stft

__all__ = [
    'stft', 'istft', 'mel_filterbank', 'median_filter_time', 'median_filter_freq',
    'lowpass', 'resample', 'hpr_decompose',
]
