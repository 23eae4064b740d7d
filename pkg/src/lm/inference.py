"""
HF token prediction and bandwidth extension.

``extend`` LF-encodes a 16 kHz input, predicts every section's HF token streams,
decodes their codeword sum with the HF decoder and adds the result to the
upsampled input (not to the codec's LF reconstruction).
"""

from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.autodiff.tensor import no_grad
from src.codec.branch import decode_branch, encode_branch, tokens_to_latent
from src.codec.hpcodec import HpCodec
from src.lm.estimator import Estimator, EstimatorBank
from src.models.audio import AudioClip
from src.models.base import ValidationError
from src.models.codec_config import BranchConfig
from src.models.tokens import Section, Stage, TokenSequence
from src.utils.logging import get_logger, log_function_call

logger = get_logger(__name__)


@dataclass(frozen=True)
class DecodeSettings:
    """Greedy argmax by default; ``mode="sample"`` draws with temperature and optional top-k."""
    mode: str = 'greedy'
    temperature: float = 1.0
    top_k: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ('greedy', 'sample'):
            raise ValidationError(f"decode mode must be greedy or sample, got {self.mode!r}", "mode")
        if self.temperature <= 0:
            raise ValidationError("temperature must be > 0", "temperature")

    @classmethod
    def from_config(cls, lm: Dict[str, Any], seed: int = 0) -> 'DecodeSettings':
        return cls(lm.get('decode', 'greedy'), float(lm.get('temperature', 1.0)), int(lm.get('top_k', 0)), seed)


def choose(logits: np.ndarray, settings: DecodeSettings, rng: Optional[np.random.Generator]) -> np.ndarray:
    """Pick one token per row of ``logits`` [..., K]."""
    if settings.mode == 'greedy':
        return logits.argmax(axis=-1)
    scaled = logits.astype(np.float64) / settings.temperature
    if 0 < settings.top_k < scaled.shape[-1]:
        cutoff = np.sort(scaled, axis=-1)[..., -settings.top_k][..., None]
        scaled = np.where(scaled < cutoff, -np.inf, scaled)
    probs = np.exp(scaled - scaled.max(axis=-1, keepdims=True))
    probs /= probs.sum(axis=-1, keepdims=True)
    flat = probs.reshape(-1, probs.shape[-1])
    picks = np.array([rng.choice(flat.shape[1], p=row) for row in flat])
    return picks.reshape(probs.shape[:-1])


def predict_chunk(est: Estimator, lf1: np.ndarray, lf2: np.ndarray, extra: Sequence[np.ndarray],
                  section_index: Optional[int], settings: DecodeSettings,
                  rng: Optional[np.random.Generator]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Both HF codebooks for at most ``max_frames`` frames.

    Stage 1 generates frame by frame on growing prefixes; stage 2 is one pass over
    the completed stage-1 sequence.
    """
    n = lf1.size
    hf1 = np.full(n, est.cfg.pad, dtype=np.int64)
    with no_grad():
        for t in range(n):
            prefix = [e[:t + 1] for e in extra]
            logits = est(lf1[:t + 1], lf2[:t + 1], hf1[:t + 1], Stage.ONE, prefix, section_index).data[0, -1]
            hf1[t] = choose(logits, settings, rng)
        logits2 = est(lf1, lf2, hf1, Stage.TWO, extra, section_index).data[0]
    return hf1, choose(logits2, settings, rng).astype(np.int64)


def chunk_plan(n: int, window: int) -> List[Tuple[int, int, int]]:
    """
    Windows of ``window`` frames with 50% overlap covering ``n`` frames, as
    (start, keep_from, keep_to): each window keeps its centre, the first and
    last windows keep their outer edges.
    """
    if n <= window:
        return [(0, 0, n)]
    hop = max(1, window // 2)
    starts = list(range(0, n - window, hop)) + [n - window]
    bounds = [0] + [(starts[i + 1] + starts[i] + window) // 2 for i in range(len(starts) - 1)] + [n]
    return [(s, bounds[i], bounds[i + 1]) for i, s in enumerate(starts)]


def predict_section(bank: EstimatorBank, lf: TokenSequence, section: Section, settings: DecodeSettings,
                    rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """[2][N] HF codes of one section, chunked when N exceeds ``max_frames``."""
    est, index = bank.for_section(section)
    lf1, lf2, extra = bank.lf_streams(lf, section)
    out = np.zeros((2, lf.n_frames), dtype=np.int64)
    for start, keep_from, keep_to in chunk_plan(lf.n_frames, bank.cfg.max_frames):
        stop = min(lf.n_frames, start + bank.cfg.max_frames)
        hf1, hf2 = predict_chunk(est, lf1[start:stop], lf2[start:stop], [e[start:stop] for e in extra],
                                 index, settings, rng)
        out[0, keep_from:keep_to] = hf1[keep_from - start:keep_to - start]
        out[1, keep_from:keep_to] = hf2[keep_from - start:keep_to - start]
    return out


@log_function_call
def predict_hf(bank: EstimatorBank, lf: TokenSequence, hf_cfg: BranchConfig,
               settings: DecodeSettings = DecodeSettings()) -> TokenSequence:
    """
    Predict all HF streams aligned with ``lf``.

    Args:
        bank: Trained estimators, one per section of ``lf``
        lf: LF token sequence
        hf_cfg: HF branch configuration (rate metadata of the output)
        settings: Decoding strategy

    Returns:
        HF TokenSequence with the same sections and frame count as ``lf``
    """
    if lf.frame_rate != hf_cfg.frame_rate:
        raise ValidationError(f"LF frame rate {lf.frame_rate} differs from HF {hf_cfg.frame_rate}", "frame_rate")
    rng = np.random.default_rng(settings.seed) if settings.mode == 'sample' else None
    codes = np.stack([predict_section(bank, lf, s, settings, rng) for s in lf.sections])
    length = int(round(lf.length * hf_cfg.sample_rate / lf.sample_rate))
    return TokenSequence('hf', lf.sections, codes, (True,) * len(lf.sections), hf_cfg.frame_rate,
                         hf_cfg.sample_rate, length, lf.codebook_size)


def _check_input(codec: HpCodec, clip: AudioClip) -> None:
    if clip.sample_rate != codec.cfg.lf.sample_rate:
        raise ValidationError(
            f"extension input must be {codec.cfg.lf.sample_rate} Hz, got {clip.sample_rate} Hz", "sample_rate")


def section_selective_extend(codec: HpCodec, bank: EstimatorBank, clip: AudioClip,
                             sections: Optional[Sequence[Section]] = None,
                             settings: DecodeSettings = DecodeSettings(),
                             hf_tokens: Optional[TokenSequence] = None) -> AudioClip:
    """
    Extend ``clip`` using only ``sections`` of the predicted HF tokens.

    An empty selection adds nothing to the upsampled input. ``hf_tokens`` reuses
    an earlier prediction instead of running the estimators again.
    """
    _check_input(codec, clip)
    length = int(round(len(clip) * codec.cfg.hf.sample_rate / clip.sample_rate))
    base = codec.to_hf(clip.as_float64(), length)
    chosen = codec.sections if sections is None else tuple(s for s in codec.sections if s in set(sections))
    if not chosen:
        return AudioClip(base, codec.cfg.hf.sample_rate)
    if hf_tokens is None:
        hf_tokens = predict_hf(bank, encode_branch(codec.lf, clip).tokens, codec.cfg.hf, settings)
    with no_grad():
        latent = tokens_to_latent(codec.hf, hf_tokens, chosen)
    high = decode_branch(codec.hf, latent, length=length)
    return AudioClip(base + high.as_float64(), codec.cfg.hf.sample_rate)


def extend(codec: HpCodec, bank: EstimatorBank, clip: AudioClip,
           settings: DecodeSettings = DecodeSettings()) -> AudioClip:
    """16 kHz input -> 48 kHz output with predicted high-frequency content."""
    return section_selective_extend(codec, bank, clip, None, settings)
