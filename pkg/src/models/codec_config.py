"""
Model-shaping configuration records for the codec branches, the coupled codec and
the token estimators, plus the token-rate arithmetic.

The records are built from the ``codec`` and ``lm`` sections of a resolved
configuration dict (see ``src.utils.config``). Construction enforces the
structural invariants: integral frame rates, equal token rates across the two
branches and attention heads that divide the model width.
"""

import math
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

from src.models.audio import ResampleSpec
from src.models.base import BaseModel, ValidationError
from src.models.tokens import SEMANTIC_SECTIONS, Section

PCM_BITS = 16


@dataclass(frozen=True)
class BranchConfig(BaseModel):
    """One codec branch: rate, encoder strides and widths."""
    sample_rate: int
    encoder_rates: Tuple[int, ...]
    base_channels: int = 32
    latent_dim: int = 64
    max_channels: int = 256

    def __post_init__(self):
        object.__setattr__(self, 'encoder_rates', tuple(int(r) for r in self.encoder_rates))
        self.check()

    def _validate_fields(self):
        if self.sample_rate <= 0:
            raise ValidationError("sample_rate must be positive", "sample_rate")
        if not self.encoder_rates or any(r < 1 for r in self.encoder_rates):
            raise ValidationError(f"bad encoder rates {self.encoder_rates}", "encoder_rates")
        if self.base_channels < 1 or self.latent_dim < 1:
            raise ValidationError("channel counts must be positive", "base_channels")

    def _validate_business_rules(self):
        if self.sample_rate % self.hop != 0:
            raise ValidationError(
                f"frame rate {self.sample_rate}/{self.hop} is not integral", "encoder_rates")

    @property
    def hop(self) -> int:
        """Samples per token frame (product of the encoder strides)."""
        return int(math.prod(self.encoder_rates))

    @property
    def frame_rate(self) -> int:
        return self.sample_rate // self.hop

    def channel_plan(self) -> Tuple[int, ...]:
        """Encoder widths after the stem and after every strided stage."""
        widths = [self.base_channels]
        for _ in self.encoder_rates:
            widths.append(min(widths[-1] * 2, self.max_channels))
        return tuple(widths)


@dataclass(frozen=True)
class CodecConfig(BaseModel):
    """
    Two coupled branches sharing the quantizer layout.

    ``sections="hpr"`` builds the harmonic/percussive/residual split;
    ``sections="single"`` replaces it with one undivided chain.
    """
    lf: BranchConfig
    hf: BranchConfig
    codebook_size: int = 1024
    n_codebooks: int = 2
    sections: str = 'hpr'
    resample: ResampleSpec = field(default_factory=ResampleSpec)

    def __post_init__(self):
        self.check()

    def _validate_fields(self):
        if self.codebook_size < 2 or self.codebook_size > 65536:
            raise ValidationError("codebook_size must lie in [2, 65536]", "codebook_size")
        if self.n_codebooks < 1:
            raise ValidationError("n_codebooks must be >= 1", "n_codebooks")
        if self.sections not in ('hpr', 'single'):
            raise ValidationError(f"sections must be 'hpr' or 'single', got {self.sections!r}", "sections")

    def _validate_business_rules(self):
        if self.lf.frame_rate != self.hf.frame_rate:
            raise ValidationError(
                f"branch frame rates differ: lf {self.lf.frame_rate}/s vs hf {self.hf.frame_rate}/s",
                "encoder_rates")
        if self.hf.sample_rate <= self.lf.sample_rate:
            raise ValidationError("hf branch must run at a higher rate than lf", "sample_rate")

    @property
    def section_list(self) -> Tuple[Section, ...]:
        return SEMANTIC_SECTIONS if self.sections == 'hpr' else (Section.FULL,)

    @property
    def frame_rate(self) -> int:
        return self.lf.frame_rate

    @classmethod
    def from_dict(cls, codec: Dict[str, Any]) -> 'CodecConfig':
        def branch(d):
            return BranchConfig(d['sample_rate'], tuple(d['encoder_rates']), d['base_channels'],
                                d['latent_dim'], d.get('max_channels', 256))
        resample = ResampleSpec(**codec.get('resample', {}))
        return cls(branch(codec['lf']), branch(codec['hf']), codec['codebook_size'],
                   codec['n_codebooks'], codec['sections'], resample)


@dataclass(frozen=True)
class EstimatorConfig(BaseModel):
    """Transformer decoder settings shared by the per-section estimators."""
    d_model: int = 256
    layers: int = 4
    heads: int = 8
    ffn_dim: int = 1024
    vocab: int = 1024
    max_frames: int = 256
    dropout: float = 0.0
    shared: bool = False
    all_lf_streams: bool = False

    def __post_init__(self):
        self.check()

    def _validate_fields(self):
        if self.d_model % self.heads != 0:
            raise ValidationError(f"d_model {self.d_model} not divisible by heads {self.heads}", "heads")
        if min(self.d_model, self.layers, self.heads, self.ffn_dim, self.max_frames) < 1:
            raise ValidationError("sizes must be positive", "d_model")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError("dropout must lie in [0, 1)", "dropout")

    def _validate_business_rules(self):
        if self.vocab < 2:
            raise ValidationError("vocab must be >= 2", "vocab")

    @property
    def bos(self) -> int:
        return self.vocab

    @property
    def pad(self) -> int:
        return self.vocab + 1

    @classmethod
    def from_dict(cls, lm: Dict[str, Any], vocab: int) -> 'EstimatorConfig':
        return cls(lm['d_model'], lm['layers'], lm['heads'], lm['ffn_dim'], vocab, lm['max_frames'],
                   lm.get('dropout', 0.0), lm.get('shared_estimator', False), lm.get('all_lf_streams', False))


@dataclass(frozen=True)
class TokenRate:
    frames_per_second: float
    bits_per_second: float
    compression_ratio: float


def token_rate(branch: BranchConfig, n_codebooks_per_section: int = 2, n_sections_counted: int = 3,
               codebook_size: int = 1024, n_branches: int = 1) -> TokenRate:
    """
    Frame rate, bitrate and compression ratio against 16-bit PCM at the branch rate.

    ``n_branches=2`` counts the streams of both branches, which is how the full
    48 kHz codec reaches its ratio of 64.
    """
    fps = branch.sample_rate / branch.hop
    bits = fps * n_codebooks_per_section * n_sections_counted * n_branches * math.log2(codebook_size)
    return TokenRate(fps, bits, branch.sample_rate * PCM_BITS / bits)


def codec_token_rates(cfg: CodecConfig, sections: Optional[int] = None) -> Dict[str, TokenRate]:
    n = len(cfg.section_list) if sections is None else sections
    return {'lf': token_rate(cfg.lf, cfg.n_codebooks, n, cfg.codebook_size),
            'codec': token_rate(cfg.hf, cfg.n_codebooks, n, cfg.codebook_size, n_branches=2)}


def tiny_codec_config(sections: str = 'hpr', codebook_size: int = 8) -> CodecConfig:
    """Smallest codec that keeps the two-branch structure (gradient checks and fast tests)."""
    return CodecConfig(BranchConfig(400, (2, 2), 2, 4, 4), BranchConfig(1200, (2, 6), 2, 4, 4),
                       codebook_size, 2, sections, ResampleSpec(16, 8.0, 0.9))


def tiny_estimator_config(vocab: int = 8, **overrides: Any) -> EstimatorConfig:
    settings = dict(d_model=8, layers=2, heads=2, ffn_dim=16, vocab=vocab, max_frames=16)
    settings.update(overrides)
    return EstimatorConfig(**settings)
