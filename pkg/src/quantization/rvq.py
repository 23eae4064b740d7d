"""
Residual vector quantization: two-stage chains and the sectioned quantizer whose
harmonic, percussive and residual chains each quantize the same latent.

Training-time outputs use the straight-through estimator
``x + stopgrad(sum(q) - x)``; inference decodes from exact codeword sums
(``latent_from_codes``) so the token path and the latent path produce identical bits.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.autodiff import functional as F
from src.autodiff.nn import Module
from src.autodiff.tensor import Tensor, get_dtype, held, reduce_mean
from src.models.base import ShapeError, ValidationError
from src.models.tokens import Section
from src.quantization.codebook import Codebook, kmeans, nearest_code
from src.utils.logging import get_logger

logger = get_logger(__name__)


@dataclass
class QuantizeResult:
    """
    Output of chain or sectioned quantization.

    ``codes`` maps each quantized section to its [codebook][...frames] indices;
    ``per_section`` holds each section's codeword sum (differentiable w.r.t. its
    codebooks only); ``residual_norms`` lists the mean per-frame error norm before
    the chain and after every stage.
    """
    codes: Dict[Section, np.ndarray]
    quantized: Tensor
    codebook_loss: Tensor
    commitment_loss: Tensor
    per_section: Dict[Section, Tensor] = field(default_factory=dict)
    residual_norms: Dict[Section, List[float]] = field(default_factory=dict)


class RvqChain(Module):
    """Ordered codebooks; stage ``i > 1`` quantizes the residual left by stage ``i - 1``."""

    def __init__(self, section: Section, n_codebooks: int, size: int, dim: int, rng: np.random.Generator):
        self.codebooks = [Codebook(size, dim, rng, pin_zero=(i > 0)) for i in range(n_codebooks)]
        self.section = section

    @property
    def dim(self) -> int:
        return self.codebooks[0].dim

    @property
    def size(self) -> int:
        return self.codebooks[0].size

    def enforce_pins(self) -> None:
        for cb in self.codebooks:
            cb.enforce_pins()

    def codewords(self, codes: np.ndarray) -> Tensor:
        """Sum of the selected codewords; ``codes`` is [codebook][...]."""
        if len(codes) != len(self.codebooks):
            raise ShapeError('codewords', np.shape(codes), (len(self.codebooks),))
        total = None
        for cb, idx in zip(self.codebooks, codes):
            q = F.embedding(cb.weight, idx)
            total = q if total is None else total + q
        return total

    def fit(self, latents: np.ndarray, iters: int, rng: np.random.Generator) -> List[float]:
        """
        k-means initialize every stage on the residuals of the previous ones.

        Returns:
            Mean squared residual energy before the chain and after each stage
        """
        residual = np.asarray(latents, dtype=np.float64).reshape(-1, self.dim)
        energies = [float((residual ** 2).sum(axis=1).mean())]
        for cb in self.codebooks:
            if residual.shape[0] >= cb.size:
                centroids, _ = kmeans(residual, cb.size, iters, rng)
            else:
                jitter = rng.normal(0.0, 1e-3, size=(cb.size - residual.shape[0], self.dim))
                centroids = np.concatenate([residual, jitter])
            cb.assign(centroids)
            picked = cb.weight.data.astype(np.float64)[nearest_code(cb.weight.data, residual)]
            residual = residual - picked
            energies.append(float((residual ** 2).sum(axis=1).mean()))
        return energies


def _mean_norm(x: np.ndarray) -> float:
    return float(np.sqrt((x.astype(np.float64) ** 2).sum(axis=-1)).mean())


def _run_chain(chain: RvqChain, latent: Tensor):
    if latent.shape[-1] != chain.dim:
        raise ShapeError('chain_quantize', latent.shape, (chain.dim,))
    residual = latent
    total = codebook_loss = commitment_loss = None
    codes, norms = [], [_mean_norm(latent.data)]
    for cb in chain.codebooks:
        idx = held(nearest_code(cb.weight.data, residual.data))
        q = F.embedding(cb.weight, idx)
        cb_term = reduce_mean((residual.detach() - q) ** 2)
        commit_term = reduce_mean((residual - q.detach()) ** 2)
        codebook_loss = cb_term if codebook_loss is None else codebook_loss + cb_term
        commitment_loss = commit_term if commitment_loss is None else commitment_loss + commit_term
        total = q if total is None else total + q
        residual = residual - q.detach()
        codes.append(idx)
        norms.append(_mean_norm(residual.data))
    return np.stack(codes), total, codebook_loss, commitment_loss, norms


def chain_quantize(chain: RvqChain, latent: Tensor) -> QuantizeResult:
    """
    Quantize ``latent`` [..., D] through one chain.

    Losses are means over frames and dimensions, summed over stages:
    ``codebook = sum ||stopgrad(r_i) - q_i||^2`` and
    ``commitment = sum ||r_i - stopgrad(q_i)||^2``.
    """
    codes, total, cb_loss, commit_loss, norms = _run_chain(chain, latent)
    return QuantizeResult({chain.section: codes}, F.straight_through(latent, total), cb_loss, commit_loss,
                          {chain.section: total}, {chain.section: norms})


class SectionedRvq(Module):
    """
    Parallel chains keyed by section; the set of sections is fixed at construction.
    """

    def __init__(self, sections: Sequence[Section], n_codebooks: int, size: int, dim: int,
                 rng: np.random.Generator):
        if not sections:
            raise ValidationError("at least one section is required", "sections")
        self.sections: Tuple[Section, ...] = tuple(sections)
        self.chains = {s.value: RvqChain(s, n_codebooks, size, dim, rng) for s in self.sections}
        self.dim = dim
        self.size = size
        self.n_codebooks = n_codebooks

    def chain(self, section: Section) -> RvqChain:
        try:
            return self.chains[section.value]
        except KeyError:
            raise ValidationError(f"section {section.value} is not part of this quantizer", "section") from None

    def enforce_pins(self) -> None:
        for c in self.chains.values():
            c.enforce_pins()

    def check_active(self, active: Sequence[Section]) -> Tuple[Section, ...]:
        active = tuple(s for s in self.sections if s in set(active))
        if not active:
            raise ValidationError("active section set is empty", "active")
        return active


def sectioned_quantize(srvq: SectionedRvq, latent: Tensor, active: Sequence[Section]) -> QuantizeResult:
    """
    Every active section quantizes the same latent; codeword sums and losses add up.
    """
    active = srvq.check_active(active)
    codes, per_section, norms = {}, {}, {}
    total = codebook_loss = commitment_loss = None
    for section in active:
        c, q, cb_loss, commit_loss, n = _run_chain(srvq.chain(section), latent)
        codes[section], per_section[section], norms[section] = c, q, n
        total = q if total is None else total + q
        codebook_loss = cb_loss if codebook_loss is None else codebook_loss + cb_loss
        commitment_loss = commit_loss if commitment_loss is None else commitment_loss + commit_loss
    return QuantizeResult(codes, F.straight_through(latent, total), codebook_loss, commitment_loss,
                          per_section, norms)


def latent_from_codes(srvq: SectionedRvq, codes: Dict[Section, np.ndarray],
                      sections: Optional[Sequence[Section]] = None) -> Tensor:
    """
    Exact codeword sum over ``sections`` (default: every section present in ``codes``).

    An empty selection yields an all-zero latent of the right shape.
    """
    chosen = [s for s in srvq.sections if s in codes and (sections is None or s in set(sections))]
    some = next(iter(codes.values()))
    total = None
    for section in chosen:
        q = srvq.chain(section).codewords(codes[section])
        total = q if total is None else total + q
    if total is None:
        return Tensor(np.zeros(some.shape[1:] + (srvq.dim,), dtype=get_dtype()))
    return total
