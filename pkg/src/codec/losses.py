"""
Differentiable reconstruction losses on the tensor engine: multiscale log-mel,
multiscale log-magnitude STFT and waveform L1.

Framing matches the evaluation metrics (replicate padding, periodic Hann,
``hop = window / 4``), implemented as a strided convolution with windowed
cosine and sine kernels.
"""

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Sequence, Tuple

import numpy as np

from src.autodiff import functional as F
from src.autodiff.tensor import Tensor, absolute, as_tensor, get_dtype, log, matmul, reduce_mean, sqrt
from src.dsp.spectral import frame_layout, hann_window, mel_filterbank
from src.evaluation.metrics import LOG_EPS, MultiScaleSpec
from src.models.audio import StftConfig
from src.models.base import ValidationError

MAG_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    mel: float = 15.0
    stft: float = 1.0
    waveform: float = 1.0
    codebook: float = 1.0
    commitment: float = 0.25

    @classmethod
    def from_dict(cls, d: Dict[str, float]) -> 'LossWeights':
        return cls(**{k: float(v) for k, v in d.items() if k in cls.__dataclass_fields__})


@lru_cache(maxsize=32)
def _dft_kernels(window: int, dtype_name: str) -> np.ndarray:
    """[2 * bins, 1, window]: windowed cosines then negated sines."""
    n = np.arange(window)
    k = np.arange(window // 2 + 1)[:, None]
    w = hann_window(window)
    phase = 2.0 * np.pi * k * n / window
    kernels = np.concatenate([np.cos(phase) * w, -np.sin(phase) * w])
    return kernels[:, None, :].astype(dtype_name)


@lru_cache(maxsize=32)
def _mel_matrix(window: int, n_mels: int, rate: int, dtype_name: str) -> np.ndarray:
    return mel_filterbank(window, n_mels, rate).T.astype(dtype_name)


def power_frames(audio: Tensor, window: int) -> Tensor:
    """Power spectra [B, frames, bins] of ``audio`` [B, L]."""
    hop = window // 4
    batch, length = audio.shape
    left, right, _ = frame_layout(length, StftConfig(window, hop, window))
    padded = F.pad_replicate(audio, left, right).reshape(batch, 1, length + left + right)
    kernels = Tensor(_dft_kernels(window, np.dtype(get_dtype()).name))
    spec = F.conv1d(padded, kernels, None, stride=hop)
    bins = window // 2 + 1
    re, im = spec[:, :bins, :], spec[:, bins:, :]
    return (re * re + im * im).transpose(0, 2, 1)


def _usable(windows: Sequence[int], length: int) -> List[int]:
    return [w for w in windows if w <= length]


def stft_loss(ref: Tensor, est: Tensor, spec: MultiScaleSpec) -> Tensor:
    """Mean over scales of mean |log(|X| + eps) - log(|Y| + eps)|."""
    windows = _usable(spec.stft_windows, ref.shape[-1])
    if not windows:
        raise ValidationError(f"no STFT scale fits a clip of {ref.shape[-1]} samples", "length")
    total = None
    for window in windows:
        a = log(sqrt(power_frames(ref, window) + MAG_FLOOR) + LOG_EPS)
        b = log(sqrt(power_frames(est, window) + MAG_FLOOR) + LOG_EPS)
        term = reduce_mean(absolute(a - b))
        total = term if total is None else total + term
    return total * (1.0 / len(windows))


def mel_loss(ref: Tensor, est: Tensor, spec: MultiScaleSpec, rate: int) -> Tensor:
    """Mean over scales of mean |log(mel power + eps)| differences."""
    scales = [(w, m) for w, m in spec.mel_windows if w <= ref.shape[-1]]
    if not scales:
        raise ValidationError(f"no mel scale fits a clip of {ref.shape[-1]} samples", "length")
    total = None
    for window, n_mels in scales:
        fb = as_tensor(_mel_matrix(window, n_mels, rate, np.dtype(get_dtype()).name))
        a = log(matmul(power_frames(ref, window), fb) + LOG_EPS)
        b = log(matmul(power_frames(est, window), fb) + LOG_EPS)
        term = reduce_mean(absolute(a - b))
        total = term if total is None else total + term
    return total * (1.0 / len(scales))


def waveform_loss(ref: Tensor, est: Tensor) -> Tensor:
    return reduce_mean(absolute(ref - est))


@dataclass
class ReconstructionLosses:
    """Unweighted loss terms of one branch."""
    mel: Tensor
    stft: Tensor
    waveform: Tensor
    codebook: Tensor
    commitment: Tensor
    values: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        self.values = {k: float(getattr(self, k).data) for k in ('mel', 'stft', 'waveform', 'codebook', 'commitment')}

    def reconstruction(self, weights: LossWeights) -> Tensor:
        return self.mel * weights.mel + self.stft * weights.stft + self.waveform * weights.waveform

    def vq(self, weights: LossWeights) -> Tensor:
        return self.codebook * weights.codebook + self.commitment * weights.commitment

    def total(self, weights: LossWeights) -> Tensor:
        return self.reconstruction(weights) + self.vq(weights)


def reconstruction_losses(ref: Tensor, est: Tensor, codebook: Tensor, commitment: Tensor,
                          spec: MultiScaleSpec, rate: int) -> ReconstructionLosses:
    return ReconstructionLosses(mel_loss(ref, est, spec, rate), stft_loss(ref, est, spec),
                                waveform_loss(ref, est), codebook, commitment)


def combine_branches(lf: ReconstructionLosses, hf: ReconstructionLosses, weights: LossWeights) -> Tensor:
    """Joint objective: codebook-type terms summed across branches, the rest averaged."""
    return (lf.reconstruction(weights) + hf.reconstruction(weights)) * 0.5 + lf.vq(weights) + hf.vq(weights)


def loss_spec(windows: Sequence[int], mel_windows: Sequence[Tuple[int, int]]) -> MultiScaleSpec:
    return MultiScaleSpec(tuple(int(w) for w in windows), tuple((int(w), int(m)) for w, m in mel_windows))
