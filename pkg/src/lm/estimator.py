"""
Token estimators: causal transformer decoders that map a section's LF token
streams to the matching HF token streams in two stages.

Stage 1 predicts the first HF codebook autoregressively; the HF context slot at
position ``n`` holds the HF token of ``n - 1`` (BOS at ``n = 0``). Stage 2
predicts the second HF codebook in one causal pass with the complete first-codebook
sequence aligned in the context slot. The two stages share the embeddings and
the decoder stack and differ only in their output heads.
"""

from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.autodiff import functional as F
from src.autodiff.nn import Embedding, LayerNorm, Linear, Module
from src.autodiff.tensor import Tensor, matmul
from src.models.base import ShapeError, ValidationError
from src.models.codec_config import EstimatorConfig
from src.models.tokens import Section, Stage, TokenSequence
from src.utils.logging import get_logger
from src.utils.persistence import Checkpoint, load_checkpoint

logger = get_logger(__name__)

MASK_VALUE = -1e9


def causal_mask(n: int) -> np.ndarray:
    """[n, n] additive mask: 0 on and below the diagonal, ``MASK_VALUE`` above."""
    return np.triu(np.full((n, n), MASK_VALUE), k=1)


class CausalSelfAttention(Module):
    def __init__(self, d_model: int, heads: int, rng: np.random.Generator):
        self.qkv = Linear(d_model, 3 * d_model, rng)
        self.proj = Linear(d_model, d_model, rng)
        self.heads = heads
        self.d_model = d_model

    def forward(self, x: Tensor) -> Tensor:
        batch, n, d = x.shape
        dh = d // self.heads
        qkv = self.qkv(x)

        def split(i):
            part = qkv[:, :, i * d:(i + 1) * d]
            return part.reshape(batch, n, self.heads, dh).transpose(0, 2, 1, 3)

        q, k, v = split(0), split(1), split(2)
        scores = matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
        weights = F.softmax(scores + causal_mask(n).astype(x.data.dtype), axis=-1)
        out = matmul(weights, v).transpose(0, 2, 1, 3).reshape(batch, n, d)
        return self.proj(out)


class DecoderBlock(Module):
    """Pre-LN block: ``x + attn(ln(x))`` then ``x + ffn(ln(x))``."""

    def __init__(self, cfg: EstimatorConfig, rng: np.random.Generator):
        self.ln1 = LayerNorm(cfg.d_model)
        self.attn = CausalSelfAttention(cfg.d_model, cfg.heads, rng)
        self.ln2 = LayerNorm(cfg.d_model)
        self.ff1 = Linear(cfg.d_model, cfg.ffn_dim, rng)
        self.ff2 = Linear(cfg.ffn_dim, cfg.d_model, rng)
        self.dropout = cfg.dropout

    def forward(self, x: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
        x = x + F.dropout(self.attn(self.ln1(x)), self.dropout, rng, self.training)
        h = self.ff2(F.gelu(self.ff1(self.ln2(x))))
        return x + F.dropout(h, self.dropout, rng, self.training)


class Estimator(Module):
    """
    One section's estimator.

    Tables ``E_lf1``, ``E_lf2`` and ``E_hf1`` each hold K codes plus BOS and PAD
    rows. ``extra_lf`` holds the other sections' LF tables when every LF stream is
    fed; ``section_table`` exists only for an estimator shared across sections.
    """

    def __init__(self, cfg: EstimatorConfig, rng: np.random.Generator, n_extra_lf: int = 0,
                 n_sections: int = 0):
        rows = cfg.vocab + 2
        self.E_lf1 = Embedding(rows, cfg.d_model, rng)
        self.E_lf2 = Embedding(rows, cfg.d_model, rng)
        self.E_hf1 = Embedding(rows, cfg.d_model, rng)
        self.extra_lf = [Embedding(rows, cfg.d_model, rng) for _ in range(n_extra_lf)]
        self.section_table = Embedding(n_sections, cfg.d_model, rng) if n_sections else None
        self.positions = Embedding(cfg.max_frames, cfg.d_model, rng)
        self.blocks = [DecoderBlock(cfg, rng) for _ in range(cfg.layers)]
        self.ln_f = LayerNorm(cfg.d_model)
        self.head_stage1 = Linear(cfg.d_model, cfg.vocab, rng)
        self.head_stage2 = Linear(cfg.d_model, cfg.vocab, rng)
        self.cfg = cfg

    def forward(self, lf1, lf2, hf1, stage: Stage, extra: Sequence[np.ndarray] = (),
                section_index: Optional[int] = None, rng: Optional[np.random.Generator] = None) -> Tensor:
        return forward(self, build_inputs(self, lf1, lf2, hf1, stage, extra, section_index), stage, rng)


def _as_batch(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.int64)
    return arr[None, :] if arr.ndim == 1 else arr


def context_stream(est: Estimator, hf1: np.ndarray, stage: Stage) -> np.ndarray:
    """HF codebook-1 context per position: BOS-shifted for stage 1, aligned for stage 2."""
    if Stage(stage) is Stage.ONE:
        bos = np.full((hf1.shape[0], 1), est.cfg.bos, dtype=np.int64)
        return np.concatenate([bos, hf1[:, :-1]], axis=1)
    return hf1


def build_inputs(est: Estimator, lf1, lf2, hf1, stage: Stage, extra: Sequence[np.ndarray] = (),
                 section_index: Optional[int] = None) -> Tensor:
    """
    Embed one batch of aligned streams.

    Position ``n`` receives ``E_lf1[lf1[n]] + E_lf2[lf2[n]] + E_hf1[c[n]] + pos[n]``
    (plus extra LF tables and the section embedding when configured).

    Args:
        est: Estimator
        lf1, lf2: LF codebook 1 and 2 streams, [N] or [B, N]
        hf1: HF codebook-1 stream of the same length (entries past the current
            position may hold PAD during stage-1 generation)
        stage: Which stage the context is built for
        extra: Additional LF streams matching ``est.extra_lf``
        section_index: Row of the section table (shared estimator only)

    Returns:
        Tensor [B, N, d_model]

    Raises:
        ShapeError: mismatched stream lengths or more than ``max_frames`` positions
    """
    lf1, lf2, hf1 = _as_batch(lf1), _as_batch(lf2), _as_batch(hf1)
    extra = [_as_batch(e) for e in extra]
    if not (lf1.shape == lf2.shape == hf1.shape) or any(e.shape != lf1.shape for e in extra):
        raise ShapeError('build_inputs', lf1.shape, lf2.shape, hf1.shape, *(e.shape for e in extra))
    if len(extra) != len(est.extra_lf):
        raise ValidationError(f"estimator expects {len(est.extra_lf)} extra LF streams, got {len(extra)}", "extra")
    n = lf1.shape[1]
    if n < 1 or n > est.cfg.max_frames:
        raise ShapeError('build_inputs', lf1.shape, detail=f"frame count must lie in [1, {est.cfg.max_frames}]")
    x = est.E_lf1(lf1) + est.E_lf2(lf2) + est.E_hf1(context_stream(est, hf1, stage)) + est.positions(np.arange(n))
    for table, stream in zip(est.extra_lf, extra):
        x = x + table(stream)
    if est.section_table is not None:
        if section_index is None:
            raise ValidationError("a shared estimator needs a section index", "section_index")
        x = x + est.section_table(np.asarray([section_index]))
    return x


def forward(est: Estimator, inputs: Tensor, stage: Stage, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Causal decoder stack and the stage's head: [B, N, d_model] -> logits [B, N, K]."""
    h = inputs
    for block in est.blocks:
        h = block(h, rng)
    h = est.ln_f(h)
    head = est.head_stage1 if Stage(stage) is Stage.ONE else est.head_stage2
    return head(h)


class EstimatorBank(Module):
    """
    One estimator per quantizer section, or a single estimator shared by all of
    them. With ``all_lf_streams`` each estimator also reads the other sections'
    LF streams (in canonical section order).
    """

    def __init__(self, cfg: EstimatorConfig, sections: Sequence[Section], rng: np.random.Generator):
        self.sections: Tuple[Section, ...] = tuple(sections)
        n_extra = 2 * (len(self.sections) - 1) if cfg.all_lf_streams else 0
        if cfg.shared:
            self.estimators = {'shared': Estimator(cfg, rng, n_extra, len(self.sections))}
        else:
            self.estimators = {s.value: Estimator(cfg, rng, n_extra) for s in self.sections}
        self.cfg = cfg

    def for_section(self, section: Section) -> Tuple[Estimator, Optional[int]]:
        if section not in self.sections:
            raise ValidationError(f"no estimator for section {section.value}", "section")
        if self.cfg.shared:
            return self.estimators['shared'], self.sections.index(section)
        return self.estimators[section.value], None

    def lf_streams(self, lf: TokenSequence, section: Section) -> Tuple[np.ndarray, np.ndarray, List[np.ndarray]]:
        """Own-section LF streams plus, when configured, every other section's."""
        extra = []
        if self.cfg.all_lf_streams:
            for other in self.sections:
                if other is not section:
                    extra.extend([lf.stream(other, 1), lf.stream(other, 2)])
        return lf.stream(section, 1), lf.stream(section, 2), extra


def bank_checkpoint(bank: EstimatorBank, digest: str, optimizer: Optional[Dict[str, np.ndarray]] = None,
                    meta: Optional[Dict] = None) -> Checkpoint:
    return Checkpoint(digest, bank.state_dict(), optimizer or {}, dict(meta or {}, kind='estimators'))


def load_estimators(path, cfg: EstimatorConfig, sections: Sequence[Section], digest: Optional[str] = None,
                    allow_mismatch: bool = False) -> EstimatorBank:
    ckpt = load_checkpoint(path, digest, allow_mismatch)
    if ckpt.meta.get('kind') != 'estimators':
        raise ValidationError(f"{path} is not an estimator checkpoint", "path")
    bank = EstimatorBank(cfg, sections, np.random.default_rng(0))
    bank.load_state_dict(ckpt.tensors)
    return bank
