"""
The coupled two-branch codec.

The low-frequency branch codes the input downsampled to its rate. Its
reconstruction is upsampled back to the high rate, and the high-frequency branch
codes what is left: ``s_hi - upsample(lf_reconstruction)``. The full
reconstruction is the upsampled LF reconstruction plus the HF decode.
"""

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Optional, Sequence, Set

import numpy as np

from src.autodiff.nn import Module
from src.codec.branch import BranchModel, decode_branch, encode_branch
from src.dsp.filters import resample, resample_array
from src.models.audio import AudioClip
from src.models.base import PreconditionError, ValidationError
from src.models.codec_config import CodecConfig
from src.models.tokens import Section, TokenSequence, assert_aligned
from src.utils.logging import get_logger, log_function_call
from src.utils.persistence import Checkpoint, load_checkpoint

logger = get_logger(__name__)


class HpCodec(Module):
    """
    LF and HF branches plus the resampler that couples them.

    ``trained_phases`` records which cascade phases have completed (persisted with
    checkpoints) so later phases can check their preconditions.
    """

    def __init__(self, cfg: CodecConfig, rng: np.random.Generator):
        sections = cfg.section_list
        self.lf = BranchModel('lf', cfg.lf, sections, cfg.codebook_size, cfg.n_codebooks, rng)
        self.hf = BranchModel('hf', cfg.hf, sections, cfg.codebook_size, cfg.n_codebooks, rng)
        self.cfg = cfg
        self.trained_phases: Set[str] = set()

    @property
    def sections(self):
        return self.cfg.section_list

    def branch(self, name: str) -> BranchModel:
        return {'lf': self.lf, 'hf': self.hf}[name]

    def to_lf(self, samples: np.ndarray) -> np.ndarray:
        return resample_array(samples, self.cfg.hf.sample_rate, self.cfg.lf.sample_rate, self.cfg.resample)

    def to_hf(self, samples: np.ndarray, length: Optional[int] = None) -> np.ndarray:
        """Upsample LF-rate samples, trimmed or zero-padded to ``length``."""
        up = resample_array(samples, self.cfg.lf.sample_rate, self.cfg.hf.sample_rate, self.cfg.resample)
        if length is not None:
            up = up[:length] if up.size >= length else np.pad(up, (0, length - up.size))
        return up


@dataclass
class CodecOutput:
    """Every intermediate signal of one coupled encode/decode pass."""
    lf_input: AudioClip
    lf_reconstruction: AudioClip
    lf_upsampled: AudioClip
    hf_input: AudioClip
    hf_reconstruction: AudioClip
    reconstruction: AudioClip
    lf_tokens: TokenSequence
    hf_tokens: TokenSequence
    losses: Dict[str, float] = field(default_factory=dict)


def _frame_padded(codec: HpCodec, clip: AudioClip) -> AudioClip:
    """Zero-pad an HF-rate clip to a whole number of frames so both branches see the same frame count."""
    target = codec.hf.padded_length(len(clip))
    if target == len(clip):
        return clip
    return clip.with_samples(np.pad(clip.as_float64(), (0, target - len(clip))))


def _lf_length(codec: HpCodec, hf_length: int) -> int:
    """True LF-rate length of a clip holding ``hf_length`` HF-rate samples."""
    return max(1, int(round(hf_length * codec.cfg.lf.sample_rate / codec.cfg.hf.sample_rate)))


@log_function_call
def codec_forward(codec: HpCodec, clip: AudioClip, sections: Optional[Sequence[Section]] = None) -> CodecOutput:
    """
    Run both branches on a clip at the HF rate.

    The clip is zero-padded to a whole number of HF frames before the LF downsample,
    so the two token streams share one frame count for any input length. Signals and
    token lengths are trimmed back to the true length.

    Args:
        codec: Trained (or untrained) codec
        clip: Input at ``codec.cfg.hf.sample_rate``
        sections: Active quantizer sections for both branches (default all)
    """
    if clip.sample_rate != codec.cfg.hf.sample_rate:
        raise ValidationError(
            f"codec input must be {codec.cfg.hf.sample_rate} Hz, got {clip.sample_rate} Hz", "sample_rate")
    active = tuple(codec.sections if sections is None else sections)
    n, n_lf = len(clip), _lf_length(codec, len(clip))
    padded = _frame_padded(codec, clip)
    lf_in = resample(padded, codec.cfg.lf.sample_rate, codec.cfg.resample)
    lf_enc = encode_branch(codec.lf, lf_in, active)
    lf_rec = decode_branch(codec.lf, lf_enc.tokens)
    up = codec.to_hf(lf_rec.as_float64(), len(padded))
    hf_in = AudioClip(padded.as_float64() - up, clip.sample_rate)
    hf_enc = encode_branch(codec.hf, hf_in, active)
    hf_rec = decode_branch(codec.hf, hf_enc.tokens).as_float64()
    assert_aligned(lf_enc.tokens, hf_enc.tokens)
    lf_tokens = replace(lf_enc.tokens, length=n_lf)
    hf_tokens = replace(hf_enc.tokens, length=n)
    losses = {'lf_codebook': lf_enc.codebook_loss, 'lf_commitment': lf_enc.commitment_loss,
              'hf_codebook': hf_enc.codebook_loss, 'hf_commitment': hf_enc.commitment_loss}
    return CodecOutput(lf_in.with_samples(lf_in.samples[:n_lf]), lf_rec.with_samples(lf_rec.samples[:n_lf]),
                       AudioClip(up[:n], clip.sample_rate), hf_in.with_samples(hf_in.samples[:n]),
                       AudioClip(hf_rec[:n], clip.sample_rate), AudioClip((up + hf_rec)[:n], clip.sample_rate),
                       lf_tokens, hf_tokens, losses)


def decode_pair(codec: HpCodec, lf_tokens: TokenSequence, hf_tokens: TokenSequence,
                sections: Optional[Sequence[Section]] = None) -> AudioClip:
    """
    Full HF-rate reconstruction from aligned LF and HF token streams.

    Both branches decode every frame, then the sum is trimmed to the HF true length.
    """
    assert_aligned(lf_tokens, hf_tokens)
    lf_rec = decode_branch(codec.lf, lf_tokens, length=lf_tokens.n_frames * codec.lf.hop, sections=sections)
    full_length = hf_tokens.n_frames * codec.hf.hop
    up = codec.to_hf(lf_rec.as_float64(), full_length)
    hf_rec = decode_branch(codec.hf, hf_tokens, length=full_length, sections=sections).as_float64()
    return AudioClip((up + hf_rec)[:hf_tokens.length], hf_tokens.sample_rate)


def section_ablation_decode(codec: HpCodec, clip: AudioClip, sections: Sequence[Section],
                            branch: str = 'lf') -> AudioClip:
    """
    Encode with every section, then decode from the codeword sums of ``sections`` only.

    ``branch="lf"`` expects a clip at the LF rate and returns the LF reconstruction.
    ``branch="hf"`` expects a clip at the HF rate: the LF branch runs unchanged and the
    HF branch codes the residual; the returned clip is the HF-branch reconstruction of
    that residual.
    """
    model = codec.branch(branch)
    if branch == 'hf':
        clip = hf_residual_input(codec, clip)
    encoded = encode_branch(model, clip)
    return decode_branch(model, encoded.tokens, sections=sections)


def hf_residual_input(codec: HpCodec, clip: AudioClip, sections: Optional[Sequence[Section]] = None) -> AudioClip:
    """``clip - upsample(lf_reconstruction(downsample(clip)))`` at the HF rate."""
    padded = _frame_padded(codec, clip)
    lf_in = resample(padded, codec.cfg.lf.sample_rate, codec.cfg.resample)
    lf_rec = decode_branch(codec.lf, encode_branch(codec.lf, lf_in, sections).tokens)
    residual = padded.as_float64() - codec.to_hf(lf_rec.as_float64(), len(padded))
    return clip.with_samples(residual[:len(clip)])


def codec_checkpoint(codec: HpCodec, digest: str, optimizer: Optional[Dict[str, np.ndarray]] = None,
                     meta: Optional[Dict] = None) -> Checkpoint:
    """Snapshot of the codec parameters (plus optional optimizer state and resume metadata)."""
    meta = dict(meta or {}, kind='codec', trained_phases=sorted(codec.trained_phases))
    return Checkpoint(digest, codec.state_dict(), optimizer or {}, meta)


def load_codec(path: Path, cfg: CodecConfig, digest: Optional[str] = None,
               allow_mismatch: bool = False) -> HpCodec:
    """
    Rebuild a codec from an HPCK file.

    Raises:
        PreconditionError: the file holds something other than a codec
    """
    ckpt = load_checkpoint(path, digest, allow_mismatch)
    if ckpt.meta.get('kind') != 'codec':
        raise PreconditionError(f"{path} is not a codec checkpoint")
    codec = HpCodec(cfg, np.random.default_rng(0))
    codec.load_state_dict(ckpt.tensors)
    codec.trained_phases = set(ckpt.meta.get('trained_phases', []))
    logger.info(f"Loaded codec from {path} (phases: {', '.join(sorted(codec.trained_phases)) or 'none'})")
    return codec
