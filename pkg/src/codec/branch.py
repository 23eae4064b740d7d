"""
One codec branch: strided convolutional encoder, sectioned RVQ and the mirrored
transposed-convolution decoder.

Every strided stage with stride ``s`` uses kernel ``2s`` with ``s`` samples of
total padding (or crop on the decoder side), so a length divisible by the hop
maps to exactly ``length / hop`` frames and back.
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from src.autodiff.nn import Conv1d, ConvTranspose1d, Module
from src.autodiff.tensor import Tensor, elu, no_grad, tanh
from src.models.audio import AudioClip
from src.models.base import ShapeError, ValidationError
from src.models.codec_config import BranchConfig
from src.models.tokens import Section, TokenSequence
from src.quantization.rvq import QuantizeResult, SectionedRvq, latent_from_codes, sectioned_quantize
from src.utils.logging import get_logger

logger = get_logger(__name__)

STEM_KERNEL = 7


def _down_padding(stride: int) -> Tuple[int, int]:
    return stride // 2 + stride % 2, stride // 2


class Encoder(Module):
    def __init__(self, cfg: BranchConfig, rng: np.random.Generator):
        widths = cfg.channel_plan()
        self.stem = Conv1d(1, widths[0], STEM_KERNEL, rng, padding=STEM_KERNEL // 2)
        self.blocks = [Conv1d(widths[i], widths[i + 1], 2 * s, rng, stride=s, padding=_down_padding(s))
                       for i, s in enumerate(cfg.encoder_rates)]
        self.proj = Conv1d(widths[-1], cfg.latent_dim, 3, rng, padding=1)

    def forward(self, x: Tensor) -> Tensor:
        """[B, 1, L] -> [B, D, L / hop]"""
        h = elu(self.stem(x))
        for block in self.blocks:
            h = elu(block(h))
        return self.proj(h)


class Decoder(Module):
    def __init__(self, cfg: BranchConfig, rng: np.random.Generator):
        widths = cfg.channel_plan()[::-1]
        rates = cfg.encoder_rates[::-1]
        self.stem = Conv1d(cfg.latent_dim, widths[0], STEM_KERNEL, rng, padding=STEM_KERNEL // 2)
        self.blocks = [ConvTranspose1d(widths[i], widths[i + 1], 2 * s, rng, stride=s,
                                       crop=_down_padding(s))
                       for i, s in enumerate(rates)]
        self.out = Conv1d(widths[-1], 1, STEM_KERNEL, rng, padding=STEM_KERNEL // 2)

    def forward(self, z: Tensor) -> Tensor:
        """[B, D, N] -> [B, 1, N * hop]"""
        h = elu(self.stem(z))
        for block in self.blocks:
            h = elu(block(h))
        return tanh(self.out(h))


class BranchModel(Module):
    """Encoder, sectioned quantizer and decoder of one branch."""

    def __init__(self, name: str, cfg: BranchConfig, sections: Sequence[Section], codebook_size: int,
                 n_codebooks: int, rng: np.random.Generator):
        self.encoder = Encoder(cfg, rng)
        self.srvq = SectionedRvq(sections, n_codebooks, codebook_size, cfg.latent_dim, rng)
        self.decoder = Decoder(cfg, rng)
        self.name = name
        self.cfg = cfg

    @property
    def hop(self) -> int:
        return self.cfg.hop

    def padded_length(self, length: int) -> int:
        return -(-length // self.hop) * self.hop

    def encode_latent(self, audio: Tensor) -> Tensor:
        """[B, L] (L divisible by hop) -> latent frames [B, N, D]."""
        if audio.ndim != 2 or audio.shape[1] % self.hop:
            raise ShapeError('encode', audio.shape, detail=f"length must be a multiple of {self.hop}")
        z = self.encoder(audio.reshape(audio.shape[0], 1, audio.shape[1]))
        return z.transpose(0, 2, 1)

    def decode_latent(self, latent: Tensor) -> Tensor:
        """[B, N, D] -> [B, N * hop]"""
        y = self.decoder(latent.transpose(0, 2, 1))
        return y.reshape(y.shape[0], y.shape[2])

    def forward(self, audio: Tensor, active: Sequence[Section]) -> Tuple[Tensor, QuantizeResult]:
        """Training path: straight-through quantization, reconstruction of the padded input."""
        quant = sectioned_quantize(self.srvq, self.encode_latent(audio), active)
        return self.decode_latent(quant.quantized), quant


@dataclass
class EncodedBranch:
    """Inference-side encoding: tokens, exact codeword-sum latent and the VQ losses."""
    tokens: TokenSequence
    latent: Tensor
    codebook_loss: float
    commitment_loss: float


def _pad_to_hop(samples: np.ndarray, hop: int) -> np.ndarray:
    target = -(-samples.size // hop) * hop
    return np.pad(samples, (0, target - samples.size))


def encode_branch(branch: BranchModel, clip: AudioClip, active: Optional[Sequence[Section]] = None) -> EncodedBranch:
    """
    Encode ``clip`` (zero-padded to a whole number of frames) into tokens.

    Inactive sections carry index 0 and are flagged inactive.
    """
    if clip.sample_rate != branch.cfg.sample_rate:
        raise ValidationError(
            f"{branch.name} branch expects {branch.cfg.sample_rate} Hz, got {clip.sample_rate} Hz", "sample_rate")
    active = branch.srvq.check_active(branch.srvq.sections if active is None else active)
    padded = _pad_to_hop(clip.samples, branch.hop)
    with no_grad():
        quant = sectioned_quantize(branch.srvq, branch.encode_latent(Tensor(padded[None, :])), active)
    n_frames = padded.size // branch.hop
    codes = np.zeros((len(branch.srvq.sections), branch.srvq.n_codebooks, n_frames), dtype=np.int64)
    for i, section in enumerate(branch.srvq.sections):
        if section in quant.codes:
            codes[i] = quant.codes[section][:, 0, :]
    tokens = TokenSequence(branch.name, branch.srvq.sections, codes,
                           tuple(s in active for s in branch.srvq.sections),
                           branch.cfg.frame_rate, branch.cfg.sample_rate, len(clip), branch.srvq.size)
    with no_grad():
        latent = tokens_to_latent(branch, tokens)
    return EncodedBranch(tokens, latent, float(quant.codebook_loss.data), float(quant.commitment_loss.data))


def tokens_to_latent(branch: BranchModel, tokens: TokenSequence,
                     sections: Optional[Sequence[Section]] = None) -> Tensor:
    """Exact codeword sum [1, N, D] of the active (and selected) sections."""
    selected = tokens.active_sections() if sections is None \
        else [s for s in tokens.active_sections() if s in set(sections)]
    codes = {s: tokens.codes[tokens.sections.index(s)][:, None, :] for s in tokens.sections}
    return latent_from_codes(branch.srvq, codes, selected)


def decode_branch(branch: BranchModel, source, length: Optional[int] = None,
                  sections: Optional[Sequence[Section]] = None) -> AudioClip:
    """
    Decode a latent [1, N, D] or a ``TokenSequence`` and trim to the true length.

    Args:
        branch: Branch to decode with
        source: Latent tensor or token sequence
        length: True clip length (taken from the tokens when omitted)
        sections: Restrict the codeword sum to these sections (tokens only)
    """
    with no_grad():
        if isinstance(source, TokenSequence):
            length = source.length if length is None else length
            latent = tokens_to_latent(branch, source, sections)
        else:
            latent = source
        audio = branch.decode_latent(latent).data[0]
    length = audio.size if length is None else length
    if length > audio.size:
        raise ShapeError('decode_branch', audio.shape, (length,), detail="true length exceeds decoded frames")
    return AudioClip(audio[:length], branch.cfg.sample_rate)
