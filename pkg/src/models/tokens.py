"""
Token-level records: quantizer sections, training iteration kinds, prediction
stages and the per-branch token sequence.
"""

from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Any, Dict, Sequence, Tuple

import numpy as np

from src.models.base import BaseModel, InvariantError, ValidationError


class Section(Enum):
    """Quantizer sections. ``FULL`` is the single undivided chain of the no-split ablation."""
    HARMONIC = 'H'
    PERCUSSIVE = 'P'
    RESIDUAL = 'R'
    FULL = 'F'

    @classmethod
    def parse(cls, text: str) -> Tuple['Section', ...]:
        """``"H,P"`` / ``"HP"`` / ``"all"`` to a section tuple in canonical order."""
        text = text.strip().upper()
        if text in ('ALL', 'GLOBAL'):
            return SEMANTIC_SECTIONS
        letters = [c for c in text if c not in ', ']
        try:
            chosen = {cls(c) for c in letters}
        except ValueError:
            raise ValidationError(f"unknown section in {text!r}; use H, P, R", "sections") from None
        return tuple(s for s in (*SEMANTIC_SECTIONS, cls.FULL) if s in chosen)


SEMANTIC_SECTIONS: Tuple[Section, ...] = (Section.HARMONIC, Section.PERCUSSIVE, Section.RESIDUAL)


class IterationKind(Enum):
    HARMONIC = 'harmonic'
    PERCUSSIVE = 'percussive'
    FULL = 'full'

    @property
    def sections(self) -> Tuple[Section, ...]:
        """Sections trained (and quantized) during an iteration of this kind."""
        return {IterationKind.HARMONIC: (Section.HARMONIC,),
                IterationKind.PERCUSSIVE: (Section.PERCUSSIVE,),
                IterationKind.FULL: SEMANTIC_SECTIONS}[self]

    @property
    def component(self) -> str:
        """Which stored signal feeds the iteration (``clip`` or an HPR component)."""
        return 'clip' if self is IterationKind.FULL else self.value


class Stage(IntEnum):
    ONE = 1
    TWO = 2


@dataclass(eq=False)
class TokenSequence(BaseModel):
    """
    Integer code streams of one branch.

    ``codes`` is laid out [section][codebook][frame]. Sections that were not active
    during encoding hold index 0 and are flagged in ``active``.
    """
    branch: str
    sections: Tuple[Section, ...]
    codes: np.ndarray
    active: Tuple[bool, ...]
    frame_rate: float
    sample_rate: int
    length: int
    codebook_size: int = 1024

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.int64)
        self.sections = tuple(self.sections)
        self.active = tuple(bool(a) for a in self.active)
        self.check()

    def _validate_fields(self):
        if self.codes.ndim != 3:
            raise ValidationError(f"codes must be [section][codebook][frame], got {self.codes.shape}", "codes")
        if self.codes.shape[0] != len(self.sections) or len(self.active) != len(self.sections):
            raise ValidationError("one code block and one active flag per section", "sections")
        if self.length < 1:
            raise ValidationError("length must be >= 1", "length")

    def _validate_business_rules(self):
        if self.codes.size and (self.codes.min() < 0 or self.codes.max() >= self.codebook_size):
            raise ValidationError(f"code index outside [0, {self.codebook_size})", "codes")

    @property
    def n_frames(self) -> int:
        return int(self.codes.shape[2])

    @property
    def n_codebooks(self) -> int:
        return int(self.codes.shape[1])

    def stream(self, section: Section, codebook: int) -> np.ndarray:
        """Codes of ``section`` for codebook ``1`` or ``2``."""
        return self.codes[self.sections.index(section), codebook - 1]

    def active_sections(self) -> Tuple[Section, ...]:
        return tuple(s for s, a in zip(self.sections, self.active) if a)

    def crop(self, start: int, stop: int) -> 'TokenSequence':
        return TokenSequence(self.branch, self.sections, self.codes[:, :, start:stop], self.active,
                             self.frame_rate, self.sample_rate,
                             max(1, int(round((stop - start) * self.sample_rate / self.frame_rate))),
                             self.codebook_size)

    def to_dict(self) -> Dict[str, Any]:
        return {'branch': self.branch, 'sections': [s.value for s in self.sections],
                'active': list(self.active), 'frame_rate': self.frame_rate,
                'sample_rate': self.sample_rate, 'length': self.length,
                'codebook_size': self.codebook_size, 'n_frames': self.n_frames,
                'n_codebooks': self.n_codebooks}


def assert_aligned(*sequences: TokenSequence) -> int:
    """All sequences share one frame count; returns it."""
    counts = {seq.branch + str(i): seq.n_frames for i, seq in enumerate(sequences)}
    if len(set(counts.values())) != 1:
        raise InvariantError(f"token streams are misaligned: {counts}")
    return next(iter(counts.values()))


def section_names(sections: Sequence[Section]) -> str:
    return ''.join(s.value for s in sections) or '-'
