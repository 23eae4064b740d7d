"""
Joint training of the per-section estimators on paired LF/HF token sequences.

Each step samples a stage from {1, 2}, teacher-forces the ground-truth HF
codebook-1 context and sums the token-level cross-entropies of every section's
estimator against the HF targets of that stage. One Adam step then updates all
estimators together under a cosine learning-rate schedule.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.autodiff import functional as F
from src.autodiff.optim import Adam, LrSchedule, lr_at
from src.autodiff.rng import restore_rng, rng_state, uniform_choice
from src.autodiff.tensor import Tensor, no_grad
from src.codec.hpcodec import HpCodec, codec_forward
from src.dsp.io import read_wav
from src.generators.dataset import ClipCorpus
from src.lm.estimator import EstimatorBank, bank_checkpoint
from src.models.base import InvariantError, ValidationError
from src.models.tokens import Stage, TokenSequence, assert_aligned
from src.utils.config import config_digest
from src.utils.logging import get_logger, log_progress, log_training_step
from src.utils.persistence import load_checkpoint, save_checkpoint

logger = get_logger(__name__)

STAGES = (Stage.ONE, Stage.TWO)
LATEST = 'latest.hpck'

TokenPair = Tuple[TokenSequence, TokenSequence]


def sample_stage(rng: np.random.Generator) -> Stage:
    return uniform_choice(rng, STAGES)


def check_pair(lf: TokenSequence, hf: TokenSequence) -> int:
    """Both branches must carry the same sections and frame count."""
    if lf.sections != hf.sections:
        raise InvariantError(f"LF sections {lf.sections} differ from HF sections {hf.sections}")
    return assert_aligned(lf, hf)


@dataclass
class TokenCorpus:
    """Aligned (LF, HF) token pairs and the crop sampler over them."""
    pairs: List[TokenPair] = field(default_factory=list)

    def __post_init__(self):
        for lf, hf in self.pairs:
            check_pair(lf, hf)

    def __len__(self) -> int:
        return len(self.pairs)

    def sample_batch(self, rng: np.random.Generator, batch: int, frames: int) -> List[TokenPair]:
        """``batch`` random pairs, each cropped to the same ``frames``-long window in both branches."""
        if not self.pairs:
            raise ValidationError("token corpus is empty", "pairs")
        n = min(frames, min(lf.n_frames for lf, _ in self.pairs))
        out = []
        for _ in range(batch):
            lf, hf = self.pairs[int(rng.integers(len(self.pairs)))]
            start = int(rng.integers(0, lf.n_frames - n + 1))
            out.append((lf.crop(start, start + n), hf.crop(start, start + n)))
        return out

    def flat(self) -> List[TokenSequence]:
        return [seq for pair in self.pairs for seq in pair]

    @classmethod
    def from_sequences(cls, sequences: Sequence[TokenSequence]) -> 'TokenCorpus':
        """Inverse of ``flat``: consecutive (LF, HF) sequences."""
        if len(sequences) % 2:
            raise ValidationError("token files must hold LF/HF pairs", "sequences")
        return cls([(sequences[i], sequences[i + 1]) for i in range(0, len(sequences), 2)])


def encode_corpus(codec: HpCodec, corpus: ClipCorpus, limit: Optional[int] = None) -> TokenCorpus:
    """Encode every clip of ``corpus`` with the frozen codec into aligned token pairs."""
    records = corpus.records[:limit] if limit else corpus.records
    pairs = []
    for i, record in enumerate(tqdm(records, desc='encode', leave=False), 1):
        out = codec_forward(codec, read_wav(corpus.path_of(record)))
        pairs.append((out.lf_tokens, out.hf_tokens))
        log_progress(i, len(records), 'Encoding clips')
    logger.info(f"Encoded {len(pairs)} clips into token pairs")
    return TokenCorpus(pairs)


def _stack(batch: Sequence[TokenPair], branch: int, section, codebook: int) -> np.ndarray:
    return np.stack([pair[branch].stream(section, codebook) for pair in batch])


def batch_loss(bank: EstimatorBank, batch: Sequence[TokenPair], stage: Stage,
               rng: Optional[np.random.Generator] = None) -> Tuple[Tensor, Dict[str, float]]:
    """
    Sum over sections of the cross-entropy against the stage's HF targets.

    Returns:
        (total loss tensor, per-section loss values)
    """
    n = {check_pair(lf, hf) for lf, hf in batch}
    if len(n) != 1:
        raise InvariantError(f"batch mixes frame counts {sorted(n)}")
    total, values = None, {}
    for section in bank.sections:
        est, index = bank.for_section(section)
        lf1 = _stack(batch, 0, section, 1)
        lf2 = _stack(batch, 0, section, 2)
        extra = [np.stack(parts) for parts in zip(*(bank.lf_streams(lf, section)[2] for lf, _ in batch))]
        hf1 = _stack(batch, 1, section, 1)
        targets = _stack(batch, 1, section, int(stage))
        logits = est(lf1, lf2, hf1, stage, extra, index, rng)
        ce = F.cross_entropy(logits, targets)
        values[section.value] = float(ce.data)
        total = ce if total is None else total + ce
    return total, values


def lm_train_step(bank: EstimatorBank, batch: Sequence[TokenPair], rng: np.random.Generator,
                  optimizer: Adam, lr: float) -> Tuple[float, Stage, Dict[str, float]]:
    """
    One joint optimizer step.

    Raises:
        InvariantError: misaligned LF/HF frame counts, or a non-finite loss
    """
    stage = sample_stage(rng)
    bank.zero_grad()
    total, values = batch_loss(bank, batch, stage, rng)
    loss = float(total.data)
    if not np.isfinite(loss):
        raise InvariantError(f"non-finite estimator loss at stage {int(stage)}: {values}")
    total.backward()
    optimizer.step(lr)
    return loss, stage, values


def next_token_accuracy(bank: EstimatorBank, pairs: Sequence[TokenPair], stage: Stage = Stage.ONE) -> float:
    """Teacher-forced argmax accuracy over every section and frame."""
    hits = count = 0
    with no_grad():
        for lf, hf in pairs:
            check_pair(lf, hf)
            for section in bank.sections:
                est, index = bank.for_section(section)
                lf1, lf2, extra = bank.lf_streams(lf, section)
                logits = est(lf1, lf2, hf.stream(section, 1), stage, extra, index).data[0]
                target = hf.stream(section, int(stage))
                hits += int((logits.argmax(axis=-1) == target).sum())
                count += target.size
    return hits / max(count, 1)


class LmTrainer:
    """
    Trains an estimator bank on a token corpus.

    This class handles:
    1. Stage sampling and joint cross-entropy steps with a cosine learning rate
    2. Loss logging (per step, per section)
    3. Periodic checkpoints and exact resumption from ``latest.hpck``
    """

    def __init__(self, bank: EstimatorBank, corpus: TokenCorpus, config: Dict[str, Any],
                 rng: np.random.Generator, run_dir: Optional[Path] = None, steps: Optional[int] = None):
        train = config['train']
        self.bank = bank
        self.corpus = corpus
        self.rng = rng
        self.run_dir = Path(run_dir) if run_dir else None
        self.steps = int(steps if steps is not None else train['steps']['lm'])
        self.batch_size = int(train['lm_batch_size'])
        self.frames = min(int(train['lm_crop_frames']), bank.cfg.max_frames)
        self.checkpoint_every = int(train.get('checkpoint_every', 0))
        self.log_every = int(train.get('log_every', 50))
        self.schedule = LrSchedule('cosine', float(train['lr']['lm']), total_steps=max(self.steps, 1))
        self.optimizer = Adam(bank.parameters())
        self.records: List[Dict[str, Any]] = []
        self.step = 0
        self.digest = config_digest(config)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.records)

    def save_latest(self) -> Optional[Path]:
        if self.run_dir is None:
            return None
        meta = {'step': self.step, 'rng': rng_state(self.rng), 'log': self.records}
        return save_checkpoint(self.run_dir / LATEST,
                               bank_checkpoint(self.bank, self.digest, self.optimizer.state_dict(), meta))

    def try_resume(self, allow_mismatch: bool = False) -> bool:
        path = self.run_dir / LATEST if self.run_dir else None
        if path is None or not path.exists():
            return False
        ckpt = load_checkpoint(path, self.digest, allow_mismatch)
        self.bank.load_state_dict(ckpt.tensors)
        self.optimizer.load_state_dict(ckpt.optimizer)
        self.step = int(ckpt.meta['step'])
        self.rng = restore_rng(ckpt.meta['rng'])
        self.records = list(ckpt.meta.get('log', []))
        logger.info(f"Resumed estimator training at step {self.step} from {path}")
        return True

    def run(self, resume: bool = False, allow_mismatch: bool = False) -> pd.DataFrame:
        if resume:
            self.try_resume(allow_mismatch)
        self.bank.train()
        with tqdm(total=self.steps, initial=self.step, desc='lm', leave=False) as bar:
            while self.step < self.steps:
                lr = lr_at(self.schedule, self.step)
                batch = self.corpus.sample_batch(self.rng, self.batch_size, self.frames)
                loss, stage, values = lm_train_step(self.bank, batch, self.rng, self.optimizer, lr)
                self.records.append({'step': self.step, 'stage': int(stage), 'lr': lr, 'loss': loss,
                                     **{f"ce_{k}": v for k, v in values.items()}})
                if self.step % self.log_every == 0:
                    log_training_step('lm', self.step, {'loss': loss, **values}, lr)
                self.step += 1
                bar.update(1)
                bar.set_postfix(loss=f"{loss:.3f}")
                if self.checkpoint_every and self.step % self.checkpoint_every == 0:
                    self.save_latest()
        self.bank.eval()
        return self.to_frame()
