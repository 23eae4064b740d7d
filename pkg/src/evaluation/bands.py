"""
Band-split evaluation: brickwall band restriction, per-pair metric reports and
corpus aggregation (mean and population standard deviation per band and metric).

A band keeps FFT bins with ``lo <= f < hi``; the Nyquist bin is kept when
``hi`` equals Nyquist. Adjacent bands therefore partition the spectrum and their
energies add up to the full-band energy.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.dsp.filters import resample
from src.evaluation.metrics import METRIC_NAMES, MultiScaleSpec, compute_all
from src.models.audio import AudioClip
from src.models.base import BaseModel, ValidationError
from src.utils.logging import get_logger

logger = get_logger(__name__)

LF_EDGE_HZ = 8000.0


@dataclass(frozen=True)
class BandSpec(BaseModel):
    """Named frequency band; ``hi_hz=None`` means the Nyquist of the evaluated clip."""
    name: str
    lo_hz: float = 0.0
    hi_hz: Optional[float] = None

    def __post_init__(self):
        self.check()

    def _validate_fields(self):
        if self.lo_hz < 0:
            raise ValidationError("lo_hz must be >= 0", "lo_hz")
        if self.hi_hz is not None and self.hi_hz <= self.lo_hz:
            raise ValidationError(f"empty band [{self.lo_hz}, {self.hi_hz}]", "hi_hz")

    def _validate_business_rules(self):
        pass

    def edges(self, rate: int) -> Tuple[float, float]:
        nyquist = rate / 2
        hi = nyquist if self.hi_hz is None else min(self.hi_hz, nyquist)
        if not 0 <= self.lo_hz < hi:
            raise ValidationError(f"band {self.name} is empty at {rate} Hz", "lo_hz")
        return self.lo_hz, hi


GLOBAL_BAND = BandSpec('Global')
LF_BAND = BandSpec('LF', 0.0, LF_EDGE_HZ)
HF_BAND = BandSpec('HF', LF_EDGE_HZ, None)
NAMED_BANDS = {'global': GLOBAL_BAND, 'lf': LF_BAND, 'hf': HF_BAND}


def parse_bands(text: str) -> List[BandSpec]:
    """
    Parse a band list such as ``global,lf,hf`` or ``global,air:12000-``.

    Custom bands are written ``name:lo-hi`` in Hz; an empty ``hi`` means Nyquist.
    """
    bands = []
    for item in (part.strip() for part in text.split(',')):
        if not item:
            continue
        if ':' in item:
            name, _, edges = item.partition(':')
            lo, _, hi = edges.partition('-')
            try:
                bands.append(BandSpec(name, float(lo or 0.0), float(hi) if hi else None))
            except ValueError:
                raise ValidationError(f"bad band edges in {item!r}; use name:lo-hi", "bands") from None
        elif item.lower() in NAMED_BANDS:
            bands.append(NAMED_BANDS[item.lower()])
        else:
            raise ValidationError(f"unknown band {item!r}; expected one of {sorted(NAMED_BANDS)} or name:lo-hi",
                                  "bands")
    return bands


def band_restrict_array(x: np.ndarray, rate: int, band: BandSpec) -> np.ndarray:
    """Zero-phase FFT brickwall on a float64 array."""
    lo, hi = band.edges(rate)
    spectrum = np.fft.rfft(np.asarray(x, dtype=np.float64))
    freqs = np.fft.rfftfreq(x.size, d=1.0 / rate)
    keep = (freqs >= lo) & (freqs < hi)
    if hi >= rate / 2:
        keep |= freqs >= hi
    spectrum[~keep] = 0.0
    return np.fft.irfft(spectrum, n=x.size)


def band_restrict(clip: AudioClip, band: BandSpec) -> AudioClip:
    """Restrict ``clip`` to ``band``."""
    return clip.with_samples(band_restrict_array(clip.as_float64(), clip.sample_rate, band))


@dataclass
class MetricsReport:
    """Per-band metrics of one reference/estimate pair."""
    clip: str
    values: Dict[str, Dict[str, float]] = field(default_factory=dict)

    def rows(self) -> List[Dict[str, object]]:
        return [{'clip': self.clip, 'band': band, **metrics} for band, metrics in self.values.items()]

    def entry_count(self) -> int:
        return sum(len(m) for m in self.values.values())


def align_pair(ref: AudioClip, est: AudioClip) -> Tuple[np.ndarray, np.ndarray]:
    """Resample the estimate to the reference rate and trim both to the shorter length."""
    if est.sample_rate != ref.sample_rate:
        est = resample(est, ref.sample_rate)
    n = min(len(ref), len(est))
    return ref.as_float64()[:n], est.as_float64()[:n]


def evaluate_pair(ref: AudioClip, est: AudioClip, bands: Sequence[BandSpec] = (GLOBAL_BAND, LF_BAND, HF_BAND),
                  spec: MultiScaleSpec = None, name: str = 'clip') -> MetricsReport:
    """
    Compute mel, STFT, waveform-L1 and SI-SDR for every band.

    Args:
        ref: Reference clip
        est: Estimate (resampled and trimmed to the reference as needed)
        bands: Bands to report
        spec: Multiscale settings
        name: Clip identifier for the report rows
    """
    spec = spec or MultiScaleSpec()
    r, e = align_pair(ref, est)
    report = MetricsReport(name)
    for band in bands:
        rb = band_restrict_array(r, ref.sample_rate, band)
        eb = band_restrict_array(e, ref.sample_rate, band)
        report.values[band.name] = compute_all(rb, eb, ref.sample_rate, spec).as_dict()
    return report


def evaluate_corpus(pairs: Sequence[Tuple[str, Callable[[], Tuple[AudioClip, AudioClip]]]],
                    bands: Sequence[BandSpec], spec: MultiScaleSpec = None,
                    workers: int = 1) -> List[MetricsReport]:
    """
    Evaluate many pairs; results come back in input order regardless of ``workers``.

    Args:
        pairs: (name, loader) tuples; each loader returns (reference, estimate)
    """
    def run(item):
        name, loader = item
        ref, est = loader()
        return evaluate_pair(ref, est, bands, spec, name=name)

    if workers <= 1:
        return [run(p) for p in pairs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, pairs))


def reports_frame(reports: Sequence[MetricsReport]) -> pd.DataFrame:
    """Per clip x band table with columns ``clip,band,mel,stft,waveform_l1,si_sdr``."""
    rows = [row for r in reports for row in r.rows()]
    return pd.DataFrame(rows, columns=['clip', 'band', *METRIC_NAMES])


def aggregate(reports: Sequence[MetricsReport]) -> pd.DataFrame:
    """
    Mean and population standard deviation per band and metric.

    Returns:
        DataFrame with columns ``band,metric,mean,std`` (band order of first appearance)
    """
    if not reports:
        raise ValidationError("no reports to aggregate", "reports")
    frame = reports_frame(reports)
    band_order = list(dict.fromkeys(frame['band']))
    rows = []
    for band in band_order:
        sub = frame[frame['band'] == band]
        for metric in METRIC_NAMES:
            values = np.sort(sub[metric].to_numpy(dtype=np.float64))
            rows.append({'band': band, 'metric': metric,
                         'mean': float(np.mean(values)), 'std': float(np.std(values))})
    return pd.DataFrame(rows, columns=['band', 'metric', 'mean', 'std'])
