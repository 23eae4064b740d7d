"""
Dataset records: synthetic-clip specifications, clip entries and the manifest.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

from src.models.base import BaseModel, ValidationError

SYNTH_KINDS = ('monophonic', 'polyphonic', 'percussive')
SPLITS = ('train', 'test')
HPR_NAMES = ('harmonic', 'percussive', 'residual')


@dataclass(frozen=True)
class SynthSpec(BaseModel):
    """
    Parameters of one synthetic clip family.

    Harmonic kinds draw f0 log-uniformly in ``[f0_min, f0_max]`` with
    ``n_partials`` partials whose amplitudes decay as ``partial_decay**k``.
    The percussive kind places clicks at ``click_rate`` Hz, each shaped by a
    decaying noise burst of ``burst_ms`` milliseconds.
    """
    kind: str = 'monophonic'
    duration: float = 2.5
    sample_rate: int = 48000
    f0_min: float = 110.0
    f0_max: float = 880.0
    n_partials: int = 20
    partial_decay: float = 0.85
    n_voices: int = 4
    click_rate: float = 8.0
    click_mode: str = 'periodic'
    burst_ms: float = 5.0
    amplitude_jitter: float = 0.1
    peak: float = 0.9

    def __post_init__(self):
        self.check()

    def _validate_fields(self):
        if self.kind not in SYNTH_KINDS:
            raise ValidationError(f"unknown synth kind {self.kind!r}", "kind")
        if self.duration <= 0:
            raise ValidationError("duration must be > 0", "duration")
        if self.sample_rate <= 0:
            raise ValidationError("sample_rate must be > 0", "sample_rate")
        if not 0 < self.f0_min <= self.f0_max:
            raise ValidationError("need 0 < f0_min <= f0_max", "f0_min")
        if self.n_partials < 1 or self.n_voices < 1:
            raise ValidationError("n_partials and n_voices must be >= 1", "n_partials")
        if self.click_mode not in ('periodic', 'poisson'):
            raise ValidationError(f"unknown click mode {self.click_mode!r}", "click_mode")

    def _validate_business_rules(self):
        if self.kind != 'percussive' and self.f0_max * self.n_partials >= self.sample_rate / 2:
            raise ValidationError(
                f"aliasing: f0_max {self.f0_max} x {self.n_partials} partials >= Nyquist {self.sample_rate / 2}",
                "n_partials")
        if self.kind == 'percussive' and self.click_rate <= 0:
            raise ValidationError("click_rate must be > 0", "click_rate")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.sample_rate))


@dataclass
class ClipRecord(BaseModel):
    """One generated clip and its HPR component files (paths relative to the manifest)."""
    clip_id: str
    path: str
    duration: float
    kind: str
    split: str
    sha256: str
    hpr: Dict[str, str] = field(default_factory=dict)
    hpr_sha256: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.check()

    def _validate_fields(self):
        if self.split not in SPLITS:
            raise ValidationError(f"split must be one of {SPLITS}", "split")
        if self.duration <= 0:
            raise ValidationError("duration must be > 0", "duration")

    def _validate_business_rules(self):
        if self.hpr and set(self.hpr) != set(HPR_NAMES):
            raise ValidationError(f"HPR cache must list {HPR_NAMES}", "hpr")


@dataclass
class DatasetManifest(BaseModel):
    """Ordered clip records plus the seed and sample rate they were generated with."""
    seed: int
    sample_rate: int
    clips: List[ClipRecord] = field(default_factory=list)
    root: Optional[Path] = None

    def __post_init__(self):
        self.check()

    def _validate_fields(self):
        ids = [c.clip_id for c in self.clips]
        if len(ids) != len(set(ids)):
            raise ValidationError("duplicate clip ids", "clips")

    def _validate_business_rules(self):
        train = {c.clip_id for c in self.clips if c.split == 'train'}
        test = {c.clip_id for c in self.clips if c.split == 'test'}
        if train & test:
            raise ValidationError("train and test splits overlap", "clips")

    def split(self, name: str) -> List[ClipRecord]:
        return [c for c in self.clips if c.split == name]

    def resolve(self, relative: str) -> Path:
        return (self.root or Path('.')) / relative

    def to_dict(self) -> Dict[str, Any]:
        return {'seed': self.seed, 'sample_rate': self.sample_rate,
                'clips': [c.to_dict() for c in self.clips]}

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + '\n', encoding='utf-8')
        return path

    @classmethod
    def load(cls, path: Path) -> 'DatasetManifest':
        path = Path(path)
        data = json.loads(path.read_text(encoding='utf-8'))
        manifest = cls(data['seed'], data['sample_rate'], [ClipRecord(**c) for c in data['clips']],
                       root=path.parent)
        missing = [c.path for c in manifest.clips if not manifest.resolve(c.path).exists()]
        if missing:
            raise ValidationError(f"{len(missing)} manifest clip(s) missing, e.g. {missing[0]}", "clips")
        return manifest
