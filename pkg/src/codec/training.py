"""
Cascade training of the two-branch codec.

Training runs in three phases:
- ``lf``: the low-frequency branch alone, on downsampled crops
- ``hf``: the high-frequency branch on the residual left by the frozen LF branch
- ``finetune``: both branches jointly; codebook-type losses are summed across
  branches and the remaining reconstruction losses are averaged

Each step samples an iteration kind. Harmonic and percussive iterations feed the
cached harmonic or percussive component and quantize (and therefore train) only
the matching quantizer section; full iterations feed the clip and use every
section. Encoder and decoder weights are updated on every iteration.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.autodiff.nn import Parameter, parameter_groups
from src.autodiff.optim import Adam, LrSchedule, lr_at
from src.autodiff.rng import restore_rng, rng_state, uniform_choice
from src.autodiff.tensor import Tensor, no_grad
from src.codec.hpcodec import HpCodec, codec_checkpoint
from src.codec.losses import LossWeights, ReconstructionLosses, combine_branches, loss_spec, reconstruction_losses
from src.generators.dataset import ClipCorpus
from src.models.base import InvariantError, PreconditionError, ValidationError
from src.models.tokens import IterationKind, Section
from src.utils.config import config_digest
from src.utils.logging import get_logger, log_training_step
from src.utils.persistence import load_checkpoint, save_checkpoint

logger = get_logger(__name__)

PHASES = ('lf', 'hf', 'finetune')
PHASE_REQUIREMENTS = {'lf': (), 'hf': ('lf',), 'finetune': ('lf', 'hf')}
LOSS_COLUMNS = ('mel', 'stft', 'waveform', 'codebook', 'commitment', 'total')
ITERATION_KINDS = (IterationKind.HARMONIC, IterationKind.PERCUSSIVE, IterationKind.FULL)
SECTION_COMPONENT = {Section.HARMONIC: 'harmonic', Section.PERCUSSIVE: 'percussive',
                     Section.RESIDUAL: 'clip', Section.FULL: 'clip'}
LATEST = 'latest.hpck'


def sample_iteration_kind(rng: np.random.Generator, semantic: bool = True) -> IterationKind:
    """Uniform over harmonic / percussive / full; always full when semantic training is off."""
    if not semantic:
        return IterationKind.FULL
    return uniform_choice(rng, ITERATION_KINDS)


@dataclass
class TrainingLog:
    """Per-step loss records of one phase."""
    phase: str
    smoothing: int = 50
    records: List[Dict[str, Any]] = field(default_factory=list)

    def append(self, step: int, kind: IterationKind, lr: float, values: Dict[str, float]) -> None:
        self.records.append({'phase': self.phase, 'step': step, 'kind': kind.value, 'lr': lr,
                             **{k: float(values[k]) for k in LOSS_COLUMNS}})

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.records, columns=['phase', 'step', 'kind', 'lr', *LOSS_COLUMNS])

    def smoothed(self, column: str = 'mel') -> pd.Series:
        return self.to_frame()[column].rolling(self.smoothing, min_periods=1).mean()

    def start_end(self, column: str = 'mel') -> Tuple[float, float]:
        """Mean of ``column`` over the first and over the last smoothing window."""
        values = self.to_frame()[column]
        if values.empty:
            raise ValidationError("training log is empty", "records")
        return float(values.head(self.smoothing).mean()), float(values.tail(self.smoothing).mean())


def phase_parameters(codec: HpCodec, phase: str) -> Tuple[List[Parameter], List[str]]:
    """Trainable parameters and the name prefixes that must stay frozen."""
    if phase not in PHASES:
        raise ValidationError(f"unknown phase {phase!r}; choose from {PHASES}", "phase")
    trainable = {'lf': ['lf.'], 'hf': ['hf.'], 'finetune': ['lf.', 'hf.']}[phase]
    frozen = [p for p in ('lf.', 'hf.') if p not in trainable]
    return parameter_groups(codec, trainable), frozen


def check_phase_preconditions(codec: HpCodec, phase: str) -> None:
    missing = [p for p in PHASE_REQUIREMENTS[phase] if p not in codec.trained_phases]
    if 'lf' in missing:
        raise PreconditionError("train LF phase first (codec-train --phase lf)")
    if missing:
        raise PreconditionError(f"phase {phase} needs completed phase(s): {', '.join(missing)}")


class CodecTrainer:
    """
    Runs one cascade phase.

    This class handles:
    1. Phase preconditions, trainable/frozen parameter split and freeze verification
    2. Crop sampling per iteration kind and the LF -> HF residual data flow
    3. Loss assembly, Adam updates with an exponential learning rate, codebook pinning
    4. k-means codebook initialization for a branch trained for the first time
    5. Periodic checkpoints and exact resumption from ``latest.hpck``
    """

    def __init__(self, codec: HpCodec, corpus: ClipCorpus, phase: str, config: Dict[str, Any],
                 rng: np.random.Generator, run_dir: Optional[Path] = None):
        """
        Initialize the trainer.

        Args:
            codec: Codec to train in place
            corpus: Training crops at the HF rate
            phase: ``lf``, ``hf`` or ``finetune``
            config: Resolved configuration
            rng: Generator driving crops and iteration kinds
            run_dir: Directory for checkpoints (None disables them)
        """
        check_phase_preconditions(codec, phase)
        if corpus.sample_rate != codec.cfg.hf.sample_rate:
            raise ValidationError(
                f"corpus is {corpus.sample_rate} Hz but the codec expects {codec.cfg.hf.sample_rate} Hz",
                "sample_rate")
        self.codec = codec
        self.corpus = corpus
        self.phase = phase
        self.config = config
        self.rng = rng
        self.run_dir = Path(run_dir) if run_dir else None

        train = config['train']
        self.weights = LossWeights.from_dict(config['loss']['weights'])
        self.spec = loss_spec(config['loss']['stft_windows'], config['loss']['mel_windows'])
        self.batch_size = int(train['batch_size'])
        self.crop_frames = int(round(train['crop_seconds'] * codec.cfg.frame_rate))
        self.crop_length = self.crop_frames * codec.cfg.hf.hop
        self.checkpoint_every = int(train.get('checkpoint_every', 0))
        self.log_every = int(train.get('log_every', 50))
        self.schedule = LrSchedule('exponential', float(train['lr'][phase]), float(train['gamma']))
        self.semantic = bool(config['lm'].get('semantic_training', True)) and codec.cfg.sections == 'hpr'
        if self.semantic:
            corpus.require_components()

        self.params, self.frozen_prefixes = phase_parameters(codec, phase)
        self.optimizer = Adam(self.params)
        self.log = TrainingLog(phase, int(train.get('smoothing', 50)))
        self.step = 0
        self.digest = config_digest(config)

    # ------------------------------------------------------------------ data flow
    def active_sections(self, kind: IterationKind) -> Tuple[Section, ...]:
        return kind.sections if self.semantic else self.codec.sections

    def lf_input(self, crops: np.ndarray) -> np.ndarray:
        return np.stack([self.codec.to_lf(row) for row in crops])

    def frozen_lf_reconstruction(self, lf_in: np.ndarray, active: Sequence[Section]) -> np.ndarray:
        with no_grad():
            rec, _ = self.codec.lf(Tensor(lf_in), active)
        return rec.data.astype(np.float64)

    def hf_input(self, crops: np.ndarray, lf_rec: np.ndarray) -> np.ndarray:
        """``crop - upsample(lf_rec)`` row by row."""
        up = np.stack([self.codec.to_hf(row, crops.shape[1]) for row in lf_rec])
        return crops - up

    def branch_losses(self, branch_name: str, inputs: np.ndarray,
                      active: Sequence[Section]) -> Tuple[ReconstructionLosses, np.ndarray]:
        branch = self.codec.branch(branch_name)
        target = Tensor(inputs)
        rec, quant = branch(target, active)
        losses = reconstruction_losses(target, rec, quant.codebook_loss, quant.commitment_loss,
                                       self.spec, branch.cfg.sample_rate)
        return losses, rec.data.astype(np.float64)

    def compute_loss(self, kind: IterationKind) -> Tuple[Tensor, Dict[str, float]]:
        active = self.active_sections(kind)
        crops = self.corpus.crop_batch(self.rng, self.batch_size, self.crop_length, kind.component)
        lf_in = self.lf_input(crops)
        if self.phase == 'lf':
            lf, _ = self.branch_losses('lf', lf_in, active)
            return lf.total(self.weights), dict(lf.values)
        if self.phase == 'hf':
            hf, _ = self.branch_losses('hf', self.hf_input(crops, self.frozen_lf_reconstruction(lf_in, active)),
                                       active)
            return hf.total(self.weights), dict(hf.values)
        lf, lf_rec = self.branch_losses('lf', lf_in, active)
        hf, _ = self.branch_losses('hf', self.hf_input(crops, lf_rec), active)
        values = {k: (lf.values[k] + hf.values[k]) / 2.0 for k in ('mel', 'stft', 'waveform')}
        values.update({k: lf.values[k] + hf.values[k] for k in ('codebook', 'commitment')})
        return combine_branches(lf, hf, self.weights), values

    # ------------------------------------------------------------------ codebook init
    def branch_latents(self, branch_name: str, component: str, active: Sequence[Section]) -> np.ndarray:
        crops = self.corpus.crop_batch(self.rng, self.batch_size, self.crop_length, component)
        lf_in = self.lf_input(crops)
        inputs = lf_in if branch_name == 'lf' else self.hf_input(crops, self.frozen_lf_reconstruction(lf_in, active))
        branch = self.codec.branch(branch_name)
        with no_grad():
            latent = branch.encode_latent(Tensor(inputs))
        return latent.data.reshape(-1, branch.cfg.latent_dim)

    def init_codebooks(self, branch_name: str) -> Dict[str, List[float]]:
        """k-means every chain of ``branch_name`` on latents of its matching input component."""
        iters = int(self.config['codec'].get('kmeans_iters', 0))
        batches = int(self.config['codec'].get('kmeans_batches', 0))
        if iters <= 0 or batches <= 0:
            return {}
        branch = self.codec.branch(branch_name)
        energies = {}
        for section in branch.srvq.sections:
            component = SECTION_COMPONENT[section] if self.semantic else 'clip'
            active = (section,) if section in (Section.HARMONIC, Section.PERCUSSIVE) else self.codec.sections
            latents = np.concatenate([self.branch_latents(branch_name, component, active) for _ in range(batches)])
            energies[section.value] = branch.srvq.chain(section).fit(latents, iters, self.rng)
        branch.srvq.enforce_pins()
        logger.info(f"k-means initialized {branch_name} codebooks: "
                    + ', '.join(f"{s}: {e[0]:.3g} -> {e[-1]:.3g}" for s, e in energies.items()))
        return energies

    # ------------------------------------------------------------------ checkpoints
    def save_latest(self) -> Optional[Path]:
        if self.run_dir is None:
            return None
        meta = {'phase': self.phase, 'step': self.step, 'rng': rng_state(self.rng), 'log': self.log.records}
        ckpt = codec_checkpoint(self.codec, self.digest, self.optimizer.state_dict(), meta)
        return save_checkpoint(self.run_dir / LATEST, ckpt)

    def try_resume(self, allow_mismatch: bool = False) -> bool:
        """Restore parameters, optimizer, step, RNG and log from ``latest.hpck`` of this phase."""
        path = self.run_dir / LATEST if self.run_dir else None
        if path is None or not path.exists():
            return False
        ckpt = load_checkpoint(path, self.digest, allow_mismatch)
        if ckpt.meta.get('phase') != self.phase:
            logger.info(f"{path} belongs to phase {ckpt.meta.get('phase')}; starting {self.phase} fresh")
            return False
        self.codec.load_state_dict(ckpt.tensors)
        self.codec.trained_phases = set(ckpt.meta.get('trained_phases', []))
        self.optimizer.load_state_dict(ckpt.optimizer)
        self.step = int(ckpt.meta['step'])
        self.rng = restore_rng(ckpt.meta['rng'])
        self.log.records = list(ckpt.meta.get('log', []))
        logger.info(f"Resumed {self.phase} at step {self.step} from {path}")
        return True

    # ------------------------------------------------------------------ loop
    def train_step(self) -> Dict[str, float]:
        kind = sample_iteration_kind(self.rng, self.semantic)
        lr = lr_at(self.schedule, self.step)
        self.codec.zero_grad()
        total, values = self.compute_loss(kind)
        values['total'] = float(total.data)
        if not np.isfinite(values['total']):
            raise InvariantError(
                f"non-finite loss in phase {self.phase} at step {self.step} ({kind.value} iteration): {values}")
        total.backward()
        self.optimizer.step(lr)
        for name in ('lf', 'hf'):
            self.codec.branch(name).srvq.enforce_pins()
        self.log.append(self.step, kind, lr, values)
        if self.step % self.log_every == 0:
            log_training_step(self.phase, self.step, values, lr)
        self.step += 1
        return values

    def run(self, steps: int, resume: bool = False, allow_mismatch: bool = False) -> TrainingLog:
        """
        Train for ``steps`` optimizer steps (counting steps restored on resume).

        Raises:
            InvariantError: non-finite loss, or frozen parameters changed
        """
        resumed = resume and self.try_resume(allow_mismatch)
        if not resumed:
            first = {'lf': ['lf'], 'hf': ['hf'], 'finetune': []}[self.phase]
            for branch_name in first:
                self.init_codebooks(branch_name)
        frozen_before = {p: self.codec.checksum(p) for p in self.frozen_prefixes}
        self.codec.train()
        with tqdm(total=steps, initial=self.step, desc=f"codec {self.phase}", leave=False) as bar:
            while self.step < steps:
                values = self.train_step()
                bar.update(1)
                bar.set_postfix(mel=f"{values['mel']:.3f}")
                if self.checkpoint_every and self.step % self.checkpoint_every == 0:
                    self.save_latest()
        self.codec.eval()
        for prefix, digest in frozen_before.items():
            if self.codec.checksum(prefix) != digest:
                raise InvariantError(f"frozen parameters under {prefix!r} changed during phase {self.phase}")
        self.codec.trained_phases.add(self.phase)
        if self.log.records:
            start, end = self.log.start_end('mel')
            logger.info(f"Phase {self.phase} done after {self.step} steps: smoothed mel {start:.4f} -> {end:.4f}")
        return self.log


def codec_train_phase(codec: HpCodec, corpus: ClipCorpus, phase: str, steps: int, rng: np.random.Generator,
                      config: Dict[str, Any], run_dir: Optional[Path] = None, resume: bool = False,
                      allow_mismatch: bool = False) -> TrainingLog:
    """Train ``codec`` in place for one phase and return its loss log."""
    return CodecTrainer(codec, corpus, phase, config, rng, run_dir).run(steps, resume, allow_mismatch)
