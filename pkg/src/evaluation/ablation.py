"""
Section-ablation harnesses.

Codec mode encodes every test clip and each of its harmonic, percussive and
residual components with all quantizer sections, then decodes from the
codeword sums of every section, of H only, P only and R only. Both branches are
scored: the LF branch against its downsampled input, the HF branch against the
residual it codes.

LM mode extends low-passed test clips with every non-empty combination of
predicted sections and scores the high band against the full-band reference;
the zero-HF baseline (upsampled input alone) is reported as section set ``-``.
"""

from itertools import combinations
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.codec.branch import decode_branch, encode_branch
from src.codec.hpcodec import HpCodec, hf_residual_input
from src.dsp.filters import lowpass, resample
from src.dsp.hpr import hpr_decompose
from src.dsp.io import read_wav
from src.evaluation.bands import HF_BAND, BandSpec, evaluate_pair
from src.evaluation.metrics import METRIC_NAMES, MultiScaleSpec, compute_all
from src.generators.dataset import ClipCorpus
from src.lm.estimator import EstimatorBank
from src.lm.inference import DecodeSettings, predict_hf, section_selective_extend
from src.models.audio import AudioClip
from src.models.base import ValidationError
from src.models.dataset import HPR_NAMES
from src.models.tokens import Section, section_names
from src.utils.logging import get_logger

logger = get_logger(__name__)

ABLATION_INPUTS = ('global', 'harmonic', 'percussive', 'residual')
SUMMARY_COLUMNS = ['input', 'sections', 'branch', 'metric', 'mean', 'std']
BASELINE = '-'


def decode_settings(codec: HpCodec) -> Dict[str, Tuple[Section, ...]]:
    """``global`` plus one entry per quantizer section."""
    settings = {'global': tuple(codec.sections)}
    if len(codec.sections) > 1:
        settings.update({s.value: (s,) for s in codec.sections})
    return settings


def section_subsets(sections: Sequence[Section]) -> List[Tuple[Section, ...]]:
    """Every non-empty subset in canonical order (7 for H, P, R)."""
    return [combo for r in range(1, len(sections) + 1) for combo in combinations(sections, r)]


def ablation_inputs(corpus: ClipCorpus, record, hpr_fallback: bool = True) -> Dict[str, AudioClip]:
    """The clip and its three components, read from the cache or decomposed on the fly."""
    if not record.hpr and not hpr_fallback:
        corpus.require_components()
    clip = read_wav(corpus.path_of(record))
    if record.hpr:
        parts = {name: AudioClip(corpus.read(record, name), clip.sample_rate) for name in HPR_NAMES}
    else:
        parts = dict(zip(HPR_NAMES, hpr_decompose(clip).as_tuple()))
    return {'global': clip, **parts}


def codec_ablation_rows(codec: HpCodec, clip_id: str, inputs: Dict[str, AudioClip],
                        spec: Optional[MultiScaleSpec] = None) -> List[Dict[str, object]]:
    """Per-clip rows ``clip,input,sections,branch,<metrics>`` for every input x decoding setting."""
    rows = []
    settings = decode_settings(codec)
    for input_name, clip in inputs.items():
        lf_clip = resample(clip, codec.cfg.lf.sample_rate, codec.cfg.resample)
        hf_clip = hf_residual_input(codec, clip)
        encoded = {'lf': (lf_clip, encode_branch(codec.lf, lf_clip).tokens),
                   'hf': (hf_clip, encode_branch(codec.hf, hf_clip).tokens)}
        for setting, sections in settings.items():
            for branch, (ref, tokens) in encoded.items():
                est = decode_branch(codec.branch(branch), tokens, sections=sections)
                values = compute_all(ref.as_float64(), est.as_float64(), ref.sample_rate, spec).as_dict()
                rows.append({'clip': clip_id, 'input': input_name, 'sections': setting, 'branch': branch,
                             **values})
    return rows


def summarize(frame: pd.DataFrame, keys: Sequence[str]) -> pd.DataFrame:
    """Long-format mean and population std per ``keys`` group and metric (group order kept)."""
    long = frame.melt(id_vars=[c for c in frame.columns if c not in METRIC_NAMES],
                      value_vars=list(METRIC_NAMES), var_name='metric')
    grouped = long.groupby([*keys, 'metric'], sort=False)['value']
    out = grouped.agg(mean='mean', std=lambda v: float(np.std(v.to_numpy(dtype=np.float64)))).reset_index()
    return out[[*keys, 'metric', 'mean', 'std']]


def codec_ablation(codec: HpCodec, corpus: ClipCorpus, spec: Optional[MultiScaleSpec] = None,
                   max_clips: int = 0) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    Run the codec harness over ``corpus``.

    Returns:
        (per-clip frame, summary with columns ``input,sections,branch,metric,mean,std``)
    """
    records = corpus.records[:max_clips] if max_clips else corpus.records
    rows = []
    for record in tqdm(records, desc='ablate codec', leave=False):
        rows.extend(codec_ablation_rows(codec, record.clip_id, ablation_inputs(corpus, record), spec))
    frame = pd.DataFrame(rows, columns=['clip', 'input', 'sections', 'branch', *METRIC_NAMES])
    return frame, summarize(frame, ['input', 'sections', 'branch'])[SUMMARY_COLUMNS]


def band_limited_input(codec: HpCodec, clip: AudioClip, cutoff_hz: float = 7200.0) -> AudioClip:
    """Low-pass at ``cutoff_hz`` and downsample to the LF rate."""
    return resample(lowpass(clip, cutoff_hz), codec.cfg.lf.sample_rate, codec.cfg.resample)


def lm_ablation_rows(codec: HpCodec, bank: EstimatorBank, clip_id: str, reference: AudioClip,
                     settings: DecodeSettings = DecodeSettings(), band: BandSpec = HF_BAND,
                     spec: Optional[MultiScaleSpec] = None, cutoff_hz: float = 7200.0) -> List[Dict[str, object]]:
    low = band_limited_input(codec, reference, cutoff_hz)
    hf_tokens = predict_hf(bank, encode_branch(codec.lf, low).tokens, codec.cfg.hf, settings)
    rows = []
    for sections in [()] + section_subsets(codec.sections):
        est = section_selective_extend(codec, bank, low, sections, settings, hf_tokens=hf_tokens)
        report = evaluate_pair(reference, est, [band], spec, name=clip_id)
        rows.append({'clip': clip_id, 'sections': section_names(sections), 'band': band.name,
                     **report.values[band.name]})
    return rows


def lm_ablation(codec: HpCodec, bank: EstimatorBank, corpus: ClipCorpus,
                settings: DecodeSettings = DecodeSettings(), spec: Optional[MultiScaleSpec] = None,
                cutoff_hz: float = 7200.0, max_clips: int = 0) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    Run the LM section-combination sweep.

    Returns:
        (per-clip frame, summary with columns ``sections,band,metric,mean,std``)
    """
    records = corpus.records[:max_clips] if max_clips else corpus.records
    rows = []
    for record in tqdm(records, desc='ablate lm', leave=False):
        rows.extend(lm_ablation_rows(codec, bank, record.clip_id, read_wav(corpus.path_of(record)),
                                     settings, HF_BAND, spec, cutoff_hz))
    frame = pd.DataFrame(rows, columns=['clip', 'sections', 'band', *METRIC_NAMES])
    return frame, summarize(frame, ['sections', 'band'])


def win_rate(frame: pd.DataFrame, column: str, a: str, b: str, metric: str = 'mel',
             filters: Optional[Dict[str, str]] = None) -> float:
    """
    Share of clips where setting ``a`` of ``column`` scores better than ``b``.

    Lower is better for distances, higher for SI-SDR.
    """
    if metric not in METRIC_NAMES:
        raise ValidationError(f"unknown metric {metric!r}", "metric")
    sub = frame
    for key, value in (filters or {}).items():
        sub = sub[sub[key] == value]
    wide = sub.pivot_table(index='clip', columns=column, values=metric, aggfunc='first')
    if a not in wide or b not in wide:
        raise ValidationError(f"settings {a!r} and {b!r} must both be present", column)
    better = wide[a] > wide[b] if metric == 'si_sdr' else wide[a] < wide[b]
    return float(better.mean()) if len(better) else 0.0
