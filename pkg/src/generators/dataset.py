"""
Dataset builder: synthetic WAV corpus, cached harmonic/percussive/residual
components, the JSON manifest and the crop sampler the trainers draw from.

Layout under the output directory::

    manifest.json
    clips/<clip_id>.wav
    hpr/<clip_id>_harmonic.wav   (and _percussive, _residual)

Component files are stored as 32-bit float so the cached decomposition still
sums back to the clip. Clip generation and decomposition may run on a thread
pool; results are always reduced in manifest order.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, TypeVar

import numpy as np
import soundfile as sf
from tqdm import tqdm

from src.autodiff.rng import seeded_rng, spawn
from src.dsp.hpr import hpr_decompose
from src.dsp.io import read_wav, write_wav
from src.generators.synth import synth_clip
from src.models.audio import StftConfig
from src.models.base import PreconditionError, ValidationError
from src.models.dataset import HPR_NAMES, SYNTH_KINDS, ClipRecord, DatasetManifest, SynthSpec
from src.utils.logging import get_logger, log_artifact, log_validation_result
from src.utils.persistence import sha256_file

logger = get_logger(__name__)

T = TypeVar('T')
KIND_PREFIX = {'monophonic': 'mono', 'polyphonic': 'poly', 'percussive': 'perc'}
WAV_SUBTYPE = 'FLOAT'


@dataclass(frozen=True)
class HprSettings:
    """Framing and median-filter settings used to build the component cache."""
    stft: StftConfig = StftConfig(1024, 256, 1024)
    t_len: int = 17
    f_len: int = 17
    beta: float = 2.0

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> 'HprSettings':
        return cls(StftConfig(d['window_len'], d['hop'], d['fft_len']), d['t_len'], d['f_len'], d['beta'])


def _ordered_map(fn: Callable[[Any], T], items: Sequence[Any], workers: int, desc: str) -> List[T]:
    if workers <= 1:
        return [fn(item) for item in tqdm(items, desc=desc, leave=False)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(tqdm(pool.map(fn, items), total=len(items), desc=desc, leave=False))


def synth_specs(data_config: Mapping[str, Any]) -> Dict[str, SynthSpec]:
    """One ``SynthSpec`` per kind from the ``data`` configuration section."""
    shared = dict(data_config.get('synth', {}))
    return {kind: SynthSpec(kind=kind, duration=data_config['duration'],
                            sample_rate=data_config['sample_rate'], **shared)
            for kind in SYNTH_KINDS}


def split_plan(counts: Mapping[str, int], test_fraction: float = 0.1) -> List[Dict[str, Any]]:
    """
    Ordered clip plan: kinds in canonical order, and within each kind the last
    ``round(count * test_fraction)`` indices go to the test split.
    """
    plan = []
    for kind in SYNTH_KINDS:
        count = int(counts.get(kind, 0))
        n_test = int(round(count * test_fraction))
        for j in range(count):
            plan.append({'clip_id': f"{KIND_PREFIX[kind]}_{j:05d}", 'kind': kind,
                         'split': 'test' if j >= count - n_test else 'train'})
    unknown = set(counts) - set(SYNTH_KINDS)
    if unknown:
        raise ValidationError(f"unknown synth kinds {sorted(unknown)}", "counts")
    return plan


def decompose_clip(root: Path, record: ClipRecord, settings: HprSettings) -> ClipRecord:
    """Compute and store the three components of one clip; returns the updated record."""
    clip = read_wav(root / record.path)
    parts = hpr_decompose(clip, settings.stft, settings.t_len, settings.f_len, settings.beta)
    hpr, hashes = {}, {}
    for name, component in zip(HPR_NAMES, parts.as_tuple()):
        rel = f"hpr/{record.clip_id}_{name}.wav"
        write_wav(root / rel, component, subtype=WAV_SUBTYPE)
        hpr[name], hashes[name] = rel, sha256_file(root / rel)
    return ClipRecord(record.clip_id, record.path, record.duration, record.kind, record.split,
                      record.sha256, hpr, hashes)


def build_dataset(specs: Mapping[str, SynthSpec], counts: Mapping[str, int], out_dir: Path, seed: int,
                  test_fraction: float = 0.1, hpr: Optional[HprSettings] = HprSettings(),
                  workers: int = 1) -> DatasetManifest:
    """
    Generate the synthetic corpus, its component cache and manifest.

    Args:
        specs: ``SynthSpec`` per kind
        counts: Number of clips per kind
        out_dir: Output directory (created)
        seed: Global seed; clip ``i`` draws from the ``i``-th spawned child stream
        test_fraction: Share of each kind held out for testing
        hpr: Component settings, or None to skip decomposition
        workers: Thread count for generation and decomposition

    Returns:
        The saved manifest
    """
    out_dir = Path(out_dir)
    (out_dir / 'clips').mkdir(parents=True, exist_ok=True)
    plan = split_plan(counts, test_fraction)
    rngs = spawn(seeded_rng(seed), len(plan))
    rates = {specs[p['kind']].sample_rate for p in plan}
    if len(rates) > 1:
        raise ValidationError(f"all kinds must share one sample rate, got {sorted(rates)}", "sample_rate")
    logger.info(f"Generating {len(plan)} clips into {out_dir} (seed={seed})")

    def generate(i: int) -> ClipRecord:
        entry = plan[i]
        spec = specs[entry['kind']]
        clip = synth_clip(spec, rngs[i])
        rel = f"clips/{entry['clip_id']}.wav"
        write_wav(out_dir / rel, clip, subtype=WAV_SUBTYPE)
        return ClipRecord(entry['clip_id'], rel, clip.duration, entry['kind'], entry['split'],
                          sha256_file(out_dir / rel))

    records = _ordered_map(generate, range(len(plan)), workers, 'synth')
    if hpr is not None:
        records = _ordered_map(lambda r: decompose_clip(out_dir, r, hpr), records, workers, 'hpr')
    manifest = DatasetManifest(seed, rates.pop() if rates else 0, records, root=out_dir)
    path = manifest.save(out_dir / 'manifest.json')
    log_artifact('manifest', path)
    return manifest


def decompose_manifest(manifest: DatasetManifest, settings: HprSettings, workers: int = 1) -> DatasetManifest:
    """(Re)build the component cache of every clip and rewrite the manifest."""
    root = manifest.root or Path('.')
    records = _ordered_map(lambda r: decompose_clip(root, r, settings), manifest.clips, workers, 'hpr')
    updated = DatasetManifest(manifest.seed, manifest.sample_rate, records, root=root)
    updated.save(root / 'manifest.json')
    return updated


def verify_manifest(manifest: DatasetManifest) -> List[str]:
    """
    Recompute the sha256 of every clip and component file.

    Returns:
        Relative paths that are missing or whose content no longer matches
    """
    mutated = []
    for record in manifest.clips:
        expected = {record.path: record.sha256}
        expected.update({record.hpr[n]: record.hpr_sha256.get(n) for n in record.hpr})
        for rel, digest in expected.items():
            path = manifest.resolve(rel)
            if not path.exists() or sha256_file(path) != digest:
                mutated.append(rel)
    log_validation_result('manifest', manifest.root, not mutated, [f"changed: {p}" for p in mutated])
    return mutated


@lru_cache(maxsize=4096)
def _frames(path: str) -> int:
    return sf.info(path).frames


class ClipCorpus:
    """
    Random crops from one split of a manifest.

    This class handles:
    1. Picking clips uniformly and crop offsets uniformly within each clip
    2. Reading only the cropped region from disk
    3. Serving either the clip itself or one of its cached components
    """

    def __init__(self, manifest: DatasetManifest, split: str = 'train'):
        self.manifest = manifest
        self.records = manifest.split(split)
        self.split = split
        if not self.records:
            raise PreconditionError(f"the {split} split of the dataset is empty; run synth-data first")

    @property
    def sample_rate(self) -> int:
        return self.manifest.sample_rate

    def __len__(self) -> int:
        return len(self.records)

    def has_components(self) -> bool:
        return all(r.hpr and all(self.manifest.resolve(p).exists() for p in r.hpr.values())
                   for r in self.records)

    def require_components(self) -> None:
        if not self.has_components():
            raise PreconditionError(
                "harmonic/percussive components are missing from the dataset cache; "
                "run the decompose stage first (`hpr --manifest <manifest.json>`)")

    def path_of(self, record: ClipRecord, component: str = 'clip') -> Path:
        if component == 'clip':
            return self.manifest.resolve(record.path)
        if component not in record.hpr:
            self.require_components()
        return self.manifest.resolve(record.hpr[component])

    def read(self, record: ClipRecord, component: str = 'clip', start: int = 0,
             stop: Optional[int] = None) -> np.ndarray:
        data, _ = sf.read(str(self.path_of(record, component)), start=start, stop=stop,
                          dtype='float64', always_2d=True)
        return data.mean(axis=1)

    def crop_batch(self, rng: np.random.Generator, batch: int, length: int,
                   component: str = 'clip') -> np.ndarray:
        """
        Draw ``batch`` crops of ``length`` samples; short clips are zero-padded.

        Returns:
            float64 array [batch, length]
        """
        out = np.zeros((batch, length))
        for b in range(batch):
            record = self.records[int(rng.integers(len(self.records)))]
            total = _frames(str(self.path_of(record, 'clip')))
            start = int(rng.integers(0, max(1, total - length + 1)))
            chunk = self.read(record, component, start, min(total, start + length))
            out[b, :chunk.size] = chunk
        return out
