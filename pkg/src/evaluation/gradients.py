"""
Whole-model gradient checks on tiny codec and estimator configurations.
"""

from typing import List

import numpy as np

from src.autodiff.gradcheck import GradCheckResult, check_all_primitives, check_model
from src.autodiff.tensor import Tensor, precision
from src.codec.hpcodec import HpCodec
from src.codec.losses import LossWeights, loss_spec, reconstruction_losses
from src.lm.estimator import EstimatorBank
from src.autodiff import functional as F
from src.models.codec_config import tiny_codec_config, tiny_estimator_config
from src.models.tokens import SEMANTIC_SECTIONS, Stage

TINY_FRAMES = 10


def codec_branch_gradcheck(rng: np.random.Generator, branch: str = 'lf', samples: int = 20) -> GradCheckResult:
    """Full weighted reconstruction loss of one tiny branch, all sections active."""
    with precision('float64'):
        codec = HpCodec(tiny_codec_config(), rng).to_dtype(np.float64)
        model = codec.branch(branch)
        audio = Tensor(rng.uniform(-0.5, 0.5, size=(2, TINY_FRAMES * model.hop)))
    spec = loss_spec([32], [(32, 4)])
    weights = LossWeights()

    def loss():
        rec, quant = model(audio, SEMANTIC_SECTIONS)
        terms = reconstruction_losses(audio, rec, quant.codebook_loss, quant.commitment_loss, spec,
                                      model.cfg.sample_rate)
        return terms.total(weights)

    return check_model(f"codec-{branch}", model, loss, rng, samples)


def estimator_gradcheck(rng: np.random.Generator, stage: Stage = Stage.ONE, samples: int = 20) -> GradCheckResult:
    """Summed cross-entropy of a tiny three-section estimator bank."""
    cfg = tiny_estimator_config()
    with precision('float64'):
        bank = EstimatorBank(cfg, SEMANTIC_SECTIONS, rng).to_dtype(np.float64)
    streams = rng.integers(0, cfg.vocab, size=(len(SEMANTIC_SECTIONS), 4, 2, TINY_FRAMES))

    def loss():
        total = None
        for i, section in enumerate(bank.sections):
            est, index = bank.for_section(section)
            lf1, lf2, hf1, hf2 = streams[i]
            logits = est(lf1, lf2, hf1, stage, (), index)
            ce = F.cross_entropy(logits, hf1[None] if stage is Stage.ONE else hf2[None])
            total = ce if total is None else total + ce
        return total

    return check_model(f"estimator-stage{int(stage)}", bank, loss, rng, samples)


def run_gradchecks(rng: np.random.Generator, trials: int = 10, samples: int = 20) -> List[GradCheckResult]:
    """Every primitive op, both tiny codec branches and both estimator stages."""
    results = check_all_primitives(rng, trials)
    results += [codec_branch_gradcheck(rng, b, samples) for b in ('lf', 'hf')]
    results += [estimator_gradcheck(rng, s, samples) for s in (Stage.ONE, Stage.TWO)]
    return results
