"""
Audio data models: the sample-buffer carrier and the DSP parameter records.

``AudioClip`` is the universal signal carrier of the pipeline (band-limited inputs,
branch reconstructions and extended outputs are all clips). The remaining records
describe STFT framing, spectrograms, HPR components and the polyphase resampler.
"""

from dataclasses import dataclass
from typing import Dict, Any

import numpy as np

from src.models.base import BaseModel, ValidationError, ValidationLevel
from src.utils.logging import get_logger

logger = get_logger(__name__)


@dataclass(eq=False)
class AudioClip(BaseModel):
    """
    Mono sample buffer with its sample rate.

    Samples are stored in single precision; DSP routines promote to double.
    """
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.ascontiguousarray(np.asarray(self.samples, dtype=np.float32).reshape(-1))
        self.sample_rate = int(self.sample_rate)
        self.check()

    def _validate_fields(self):
        if self.sample_rate <= 0:
            raise ValidationError(f"sample rate must be positive, got {self.sample_rate}", "sample_rate")
        if self.samples.size < 1:
            raise ValidationError("clip must hold at least one sample", "samples")

    def _validate_business_rules(self):
        if not np.all(np.isfinite(self.samples)):
            raise ValidationError("clip contains non-finite samples", "samples")

    def __len__(self) -> int:
        return int(self.samples.size)

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def as_float64(self) -> np.ndarray:
        return self.samples.astype(np.float64)

    def with_samples(self, samples: np.ndarray) -> "AudioClip":
        return AudioClip(samples, self.sample_rate)

    def to_dict(self) -> Dict[str, Any]:
        return {'sample_rate': self.sample_rate, 'length': len(self)}

    def __repr__(self) -> str:
        return f"AudioClip(len={len(self)}, rate={self.sample_rate})"


@dataclass(frozen=True)
class StftConfig(BaseModel):
    """STFT framing parameters (periodic Hann window, replicate edge padding)."""
    window_len: int = 1024
    hop: int = 256
    fft_len: int = 1024
    window: str = "hann"
    pad_mode: str = "replicate"

    def __post_init__(self):
        self.check()

    def _validate_fields(self):
        if self.window_len < 2:
            raise ValidationError("window_len must be at least 2", "window_len")
        if self.hop < 1:
            raise ValidationError("hop must be positive", "hop")
        if self.fft_len < self.window_len:
            raise ValidationError("fft_len must be >= window_len", "fft_len")
        if self.fft_len & (self.fft_len - 1):
            raise ValidationError(f"fft_len must be a power of two, got {self.fft_len}", "fft_len")
        if self.window != "hann":
            raise ValidationError("only the Hann window is supported", "window")
        if self.pad_mode != "replicate":
            raise ValidationError("only replicate padding is supported", "pad_mode")

    def _validate_business_rules(self):
        if self.hop > self.window_len:
            raise ValidationError(f"hop {self.hop} skips samples between {self.window_len}-sample frames", "hop")
        if 2 * self.hop > self.window_len:
            raise ValidationError(f"hop {self.hop} exceeds half the window; the inverse STFT is unavailable",
                                  "hop", ValidationLevel.WARNING)

    @property
    def n_bins(self) -> int:
        return self.fft_len // 2 + 1

    @property
    def satisfies_cola(self) -> bool:
        return self.hop <= self.window_len // 2


@dataclass(eq=False)
class Spectrogram(BaseModel):
    """Complex STFT frames indexed [frame][bin] plus the framing that produced them."""
    frames: np.ndarray
    config: StftConfig
    origin_rate: int
    length: int

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.complex128)
        self.check()

    def _validate_fields(self):
        if self.frames.ndim != 2:
            raise ValidationError("frames must be a [frame][bin] matrix", "frames")
        if self.frames.shape[1] != self.config.n_bins:
            raise ValidationError(
                f"expected {self.config.n_bins} bins, got {self.frames.shape[1]}", "frames")

    def _validate_business_rules(self):
        if not np.all(np.isfinite(self.frames)):
            raise ValidationError("spectrogram contains non-finite entries", "frames")

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.frames)

    def with_frames(self, frames: np.ndarray) -> "Spectrogram":
        return Spectrogram(frames, self.config, self.origin_rate, self.length)

    def to_dict(self) -> Dict[str, Any]:
        return {'shape': list(self.frames.shape), 'config': self.config.to_dict(),
                'origin_rate': self.origin_rate, 'length': self.length}


@dataclass(eq=False)
class HprComponents(BaseModel):
    """Harmonic, percussive and residual parts of one clip."""
    harmonic: AudioClip
    percussive: AudioClip
    residual: AudioClip

    def __post_init__(self):
        self.check()

    def _validate_fields(self):
        for name, component in zip(("harmonic", "percussive", "residual"), self.as_tuple()):
            if not isinstance(component, AudioClip):
                raise ValidationError(f"expected an AudioClip, got {type(component).__name__}", name)

    def _validate_business_rules(self):
        if len({c.sample_rate for c in self.as_tuple()}) != 1:
            raise ValidationError("components must share one sample rate", "components")
        if len({len(c) for c in self.as_tuple()}) != 1:
            raise ValidationError("components must share one length", "components")

    def as_tuple(self):
        return (self.harmonic, self.percussive, self.residual)

    def by_name(self, name: str) -> AudioClip:
        return {'harmonic': self.harmonic, 'percussive': self.percussive,
                'residual': self.residual}[name]

    def to_dict(self) -> Dict[str, Any]:
        return {'sample_rate': self.harmonic.sample_rate, 'length': len(self.harmonic)}


@dataclass(frozen=True)
class ResampleSpec(BaseModel):
    """Kaiser-windowed-sinc polyphase resampler parameters."""
    taps_per_phase: int = 64
    kaiser_beta: float = 14.0
    cutoff_frac: float = 0.9

    def __post_init__(self):
        self.check()

    def _validate_fields(self):
        if self.taps_per_phase < 16:
            raise ValidationError("taps_per_phase must be >= 16", "taps_per_phase")
        if not 0.0 < self.cutoff_frac <= 1.0:
            raise ValidationError("cutoff_frac must lie in (0, 1]", "cutoff_frac")

    def _validate_business_rules(self):
        if self.kaiser_beta < 0:
            raise ValidationError("kaiser_beta must be non-negative", "kaiser_beta")
