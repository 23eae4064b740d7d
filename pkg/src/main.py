# src/main.py

"""
Main entry point for the harmonic/percussive codec and bandwidth-extension toolkit.
This script ties dataset synthesis, component decomposition, cascade codec training,
estimator training, extension, evaluation and the section ablations into one
command-line surface.

Every run resolves its configuration (profile, optional JSON file, ``--set``
overrides, environment), writes ``resolved_config.json`` and a log file into its run
directory and leaves its results there as WAV, CSV, PNG, HPCK or HPTK files.

Exit codes: 0 on success, 1 when a command fails (diagnostic on stderr and in the
log), 2 for usage errors.
"""

import argparse
import sys
import os
import time
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

# Add the project root to Python path
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, project_root)

import humanize
import numpy as np
import pandas as pd
from rich.console import Console
from rich.table import Table

from src.autodiff.rng import seeded_rng
from src.codec.branch import decode_branch
from src.codec.hpcodec import HpCodec, codec_checkpoint, codec_forward, decode_pair, load_codec
from src.codec.training import CodecTrainer, PHASES
from src.dsp.filters import resample
from src.dsp.hpr import energy_fractions, hpr_decompose
from src.dsp.io import read_wav, spectrogram_grid, spectrogram_image, write_wav
from src.evaluation.ablation import codec_ablation, lm_ablation, win_rate
from src.evaluation.bands import aggregate, evaluate_corpus, parse_bands, reports_frame
from src.evaluation.gradients import run_gradchecks
from src.evaluation.metrics import MultiScaleSpec
from src.generators.dataset import (ClipCorpus, HprSettings, build_dataset, decompose_manifest,
                                    synth_specs, verify_manifest)
from src.lm.estimator import EstimatorBank, bank_checkpoint, load_estimators
from src.lm.inference import DecodeSettings, section_selective_extend
from src.lm.training import LmTrainer, encode_corpus, next_token_accuracy
from src.models.audio import StftConfig
from src.models.base import HpxError, InvariantError, PreconditionError, ValidationError
from src.models.codec_config import CodecConfig, EstimatorConfig, codec_token_rates
from src.models.dataset import DatasetManifest, HPR_NAMES
from src.models.tokens import Section, Stage, section_names
from src.utils.config import PROFILES, config_digest, load_configuration, write_resolved_config
from src.utils.logging import get_logger, log_artifact, setup_logging
from src.utils.persistence import load_tokens, run_directory, save_checkpoint, save_tokens, write_frame

logger = get_logger(__name__)

console = Console(highlight=False)
err_console = Console(stderr=True, highlight=False)

CODEC_FILE = 'codec.hpck'
ESTIMATORS_FILE = 'estimators.hpck'
WAV_SUFFIXES = ('.wav', '.WAV')
CLIP_COLUMNS = ['clip_id', 'path', 'duration', 'kind', 'split', 'sha256']

Summary = Dict[str, Any]


# ---------------------------------------------------------------------- shared helpers
def _default_manifest(config: Dict[str, Any]) -> Path:
    return Path(config['run_root']) / 'data' / 'manifest.json'


def _codec_path(args: argparse.Namespace, config: Dict[str, Any], run_dir: Path) -> Path:
    if getattr(args, 'checkpoint', None):
        return Path(args.checkpoint)
    if args.command == 'codec-train':
        return run_dir / CODEC_FILE
    return Path(config['run_root']) / 'codec-train' / CODEC_FILE


def _estimators_path(args: argparse.Namespace, config: Dict[str, Any], run_dir: Path) -> Path:
    if getattr(args, 'estimators', None):
        return Path(args.estimators)
    if args.command == 'lm-train':
        return run_dir / ESTIMATORS_FILE
    return Path(config['run_root']) / 'lm-train' / ESTIMATORS_FILE


def _load_manifest(args: argparse.Namespace, config: Dict[str, Any]) -> DatasetManifest:
    path = Path(args.manifest) if getattr(args, 'manifest', None) else _default_manifest(config)
    if not path.exists():
        raise PreconditionError(f"no dataset manifest at {path}; run synth-data first")
    return DatasetManifest.load(path)


def _require_codec(path: Path, config: Dict[str, Any], args: argparse.Namespace) -> HpCodec:
    if not path.exists():
        raise PreconditionError(f"no codec checkpoint at {path}; train LF phase first (codec-train --phase lf)")
    return load_codec(path, CodecConfig.from_dict(config['codec']), config_digest(config),
                      args.allow_digest_mismatch)


def _require_estimators(path: Path, codec: HpCodec, config: Dict[str, Any],
                        args: argparse.Namespace) -> EstimatorBank:
    if not path.exists():
        raise PreconditionError(f"no estimator checkpoint at {path}; run lm-train first")
    cfg = EstimatorConfig.from_dict(config['lm'], codec.cfg.codebook_size)
    return load_estimators(path, cfg, codec.sections, config_digest(config), args.allow_digest_mismatch)


def _sections_arg(text: Optional[str], codec: HpCodec) -> Optional[Sequence[Section]]:
    if text is None:
        return None
    if text.strip() in ('', '-', 'none'):
        return ()
    chosen = Section.parse(text)
    unknown = [s for s in chosen if s not in codec.sections]
    if unknown:
        raise ValidationError(f"codec has no section {section_names(unknown)}; it carries "
                              f"{section_names(codec.sections)}", "sections")
    return chosen


def _wav_files(directory: Path) -> Dict[str, Path]:
    if not directory.is_dir():
        raise PreconditionError(f"{directory} is not a directory")
    return {p.stem: p for p in sorted(directory.iterdir()) if p.suffix in WAV_SUFFIXES}


def _eval_spec(config: Dict[str, Any]) -> MultiScaleSpec:
    ev = config['eval']
    return MultiScaleSpec(tuple(ev['stft_windows']), tuple(tuple(m) for m in ev['mel_windows']))


def _spectrogram_cfg(config: Dict[str, Any]) -> StftConfig:
    s = config['dsp']['spectrogram']
    return StftConfig(s['window_len'], s['hop'], s['fft_len'])


# ---------------------------------------------------------------------- commands
def cmd_synth_data(args: argparse.Namespace, config: Dict[str, Any], run_dir: Path) -> Summary:
    """Generate the synthetic corpus (or verify an existing one with ``--verify``)."""
    out_dir = Path(args.out) if args.out else _default_manifest(config).parent
    if args.verify:
        manifest = DatasetManifest.load(out_dir / 'manifest.json')
        mutated = verify_manifest(manifest)
        write_frame(run_dir / 'verify.csv', pd.DataFrame({'path': mutated}, columns=['path']))
        if mutated:
            raise InvariantError(f"{len(mutated)} dataset files changed since generation: {mutated[:5]}")
        return {'clips checked': len(manifest.clips), 'mutated files': 0}

    data = config['data']
    hpr = None if args.no_hpr else HprSettings.from_dict(config['dsp']['hpr'])
    manifest = build_dataset(synth_specs(data), data['counts'], out_dir, config['seed'],
                             data['test_fraction'], hpr, data['workers'])
    frame = pd.DataFrame([c.to_dict() for c in manifest.clips])[CLIP_COLUMNS]
    write_frame(run_dir / 'clips.csv', frame)
    counts = frame.groupby(['kind', 'split']).size()
    return {'manifest': out_dir / 'manifest.json', 'clips': len(manifest.clips),
            **{f"{kind}/{split}": n for (kind, split), n in counts.items()},
            'component cache': 'yes' if hpr else 'no'}


def cmd_hpr(args: argparse.Namespace, config: Dict[str, Any], run_dir: Path) -> Summary:
    """Decompose one WAV into its components, or build the cache of a whole manifest."""
    settings = HprSettings.from_dict(config['dsp']['hpr'])
    if args.manifest:
        manifest = decompose_manifest(DatasetManifest.load(Path(args.manifest)), settings,
                                      config['data']['workers'])
        return {'manifest': args.manifest, 'clips decomposed': len(manifest.clips)}
    if not args.wav:
        raise ValidationError("give a WAV file or --manifest", "wav")
    source = Path(args.wav)
    clip = read_wav(source)
    parts = hpr_decompose(clip, settings.stft, settings.t_len, settings.f_len, settings.beta)
    out_dir = Path(args.out) if args.out else run_dir
    for name, part in zip(HPR_NAMES, parts.as_tuple()):
        path = write_wav(out_dir / f"{source.stem}_{name}.wav", part, subtype='FLOAT')
        log_artifact('wav', path)
    fractions = energy_fractions(parts)
    write_frame(run_dir / 'energy.csv', pd.DataFrame([{'clip': source.stem, **fractions}]))
    return {'input': source, **{f"{k} energy": f"{v:.3f}" for k, v in fractions.items()}}


def cmd_codec_train(args: argparse.Namespace, config: Dict[str, Any], run_dir: Path) -> Summary:
    """Run one cascade phase; ``hf`` and ``finetune`` continue from the saved codec."""
    path = _codec_path(args, config, run_dir)
    rng = seeded_rng(config['seed'])
    if args.phase == 'lf':
        codec = HpCodec(CodecConfig.from_dict(config['codec']), rng)
    else:
        codec = _require_codec(path, config, args)
    manifest = _load_manifest(args, config)
    corpus = ClipCorpus(manifest, 'train')
    steps = args.steps if args.steps is not None else int(config['train']['steps'][args.phase])
    trainer = CodecTrainer(codec, corpus, args.phase, config, rng, run_dir)
    log = trainer.run(steps, args.resume, args.allow_digest_mismatch)
    write_frame(run_dir / f"losses_{args.phase}.csv", log.to_frame())
    save_checkpoint(path, codec_checkpoint(codec, config_digest(config), meta={'phase': args.phase}))
    summary: Summary = {'phase': args.phase, 'steps': trainer.step, 'checkpoint': path}
    if log.records:
        start, end = log.start_end('mel')
        summary.update({'smoothed mel (start)': f"{start:.4f}", 'smoothed mel (end)': f"{end:.4f}"})
    rates = codec_token_rates(codec.cfg)
    summary['LF bitrate'] = f"{rates['lf'].bits_per_second:,.0f} bit/s"
    return summary


def cmd_encode(args: argparse.Namespace, config: Dict[str, Any], run_dir: Path) -> Summary:
    """Encode a WAV into an HPTK file holding the aligned LF and HF token sequences."""
    codec = _require_codec(_codec_path(args, config, run_dir), config, args)
    source = Path(args.wav)
    clip = read_wav(source)
    if clip.sample_rate != codec.cfg.hf.sample_rate:
        clip = resample(clip, codec.cfg.hf.sample_rate, codec.cfg.resample)
    out = codec_forward(codec, clip, _sections_arg(args.sections, codec))
    path = save_tokens(Path(args.out) if args.out else run_dir / f"{source.stem}.hptk",
                       [out.lf_tokens, out.hf_tokens], {'source': source.name})
    return {'tokens': path, 'frames': out.lf_tokens.n_frames,
            'active sections': section_names(out.lf_tokens.active_sections())}


def cmd_decode(args: argparse.Namespace, config: Dict[str, Any], run_dir: Path) -> Summary:
    """Decode an HPTK file; an LF-only file decodes at the LF rate."""
    codec = _require_codec(_codec_path(args, config, run_dir), config, args)
    source = Path(args.tokens)
    sequences = load_tokens(source)
    sections = _sections_arg(args.sections, codec)
    if len(sequences) == 1:
        clip = decode_branch(codec.lf, sequences[0], sections=sections)
    else:
        clip = decode_pair(codec, sequences[0], sequences[1], sections)
    path = write_wav(Path(args.out) if args.out else run_dir / f"{source.stem}.wav", clip)
    log_artifact('wav', path)
    return {'output': path, 'sample rate': clip.sample_rate,
            'duration': humanize.precisedelta(clip.duration, minimum_unit='milliseconds')}


def cmd_lm_train(args: argparse.Namespace, config: Dict[str, Any], run_dir: Path) -> Summary:
    """Encode the training split with the frozen codec and train the estimator bank."""
    codec = _require_codec(_codec_path(args, config, run_dir), config, args)
    manifest = _load_manifest(args, config)
    tokens = encode_corpus(codec, ClipCorpus(manifest, 'train'), args.max_clips or None)
    token_dir = run_dir / 'tokens'
    for record, pair in zip(manifest.split('train'), tokens.pairs):
        save_tokens(token_dir / f"{record.clip_id}.hptk", list(pair))
    rng = seeded_rng(config['seed'])
    cfg = EstimatorConfig.from_dict(config['lm'], codec.cfg.codebook_size)
    bank = EstimatorBank(cfg, codec.sections, rng)
    trainer = LmTrainer(bank, tokens, config, rng, run_dir, args.steps)
    frame = trainer.run(args.resume, args.allow_digest_mismatch)
    write_frame(run_dir / 'lm_losses.csv', frame)
    path = save_checkpoint(_estimators_path(args, config, run_dir), bank_checkpoint(bank, config_digest(config)))
    sample = []
    for lf, hf in tokens.pairs[:8]:
        n = min(lf.n_frames, cfg.max_frames)
        sample.append((lf.crop(0, n), hf.crop(0, n)))
    accuracy = {f"stage {int(s)} accuracy": f"{next_token_accuracy(bank, sample, s):.3f}" for s in Stage}
    summary: Summary = {'pairs': len(tokens), 'steps': trainer.step, 'checkpoint': path, **accuracy}
    if len(frame):
        summary['final loss'] = f"{frame['loss'].iloc[-1]:.4f}"
    return summary


def cmd_extend(args: argparse.Namespace, config: Dict[str, Any], run_dir: Path) -> Summary:
    """16 kHz WAV in, 48 kHz WAV and its spectrogram out."""
    codec = _require_codec(_codec_path(args, config, run_dir), config, args)
    bank = _require_estimators(_estimators_path(args, config, run_dir), codec, config, args)
    source = Path(args.wav)
    clip = read_wav(source)
    settings = DecodeSettings.from_config(config['lm'], config['seed'])
    out = section_selective_extend(codec, bank, clip, _sections_arg(args.sections, codec), settings)
    wav = write_wav(Path(args.out) if args.out else run_dir / f"{source.stem}_extended.wav", out)
    log_artifact('wav', wav)
    png = spectrogram_image(out, _spectrogram_cfg(config), wav.with_suffix('.png'))
    log_artifact('png', png)
    return {'input': f"{source} ({clip.sample_rate} Hz)", 'output': f"{wav} ({out.sample_rate} Hz)",
            'spectrogram': png}


def cmd_eval(args: argparse.Namespace, config: Dict[str, Any], run_dir: Path) -> Summary:
    """Band-split metrics for every WAV name present in both directories."""
    refs = _wav_files(Path(args.ref_dir))
    ests = _wav_files(Path(args.est_dir))
    names = [n for n in refs if n in ests]
    if not names:
        raise PreconditionError(f"no WAV names shared by {args.ref_dir} and {args.est_dir}")
    if len(names) < max(len(refs), len(ests)):
        logger.warning(f"evaluating {len(names)} shared files; {len(refs)} references, {len(ests)} estimates")
    bands = parse_bands(args.bands or config['eval']['bands'])

    def loader(name: str) -> Callable[[], tuple]:
        def load():
            ref, est = read_wav(refs[name]), read_wav(ests[name])
            if args.upsample_to:
                est = resample(est, args.upsample_to)
                if ref.sample_rate != args.upsample_to:
                    ref = resample(ref, args.upsample_to)
            return ref, est
        return load

    reports = evaluate_corpus([(n, loader(n)) for n in names], bands, _eval_spec(config),
                              config['eval']['workers'])
    write_frame(run_dir / 'metrics.csv', reports_frame(reports))
    summary_frame = aggregate(reports)
    write_frame(run_dir / 'summary.csv', summary_frame)
    _print_frame(summary_frame, 'band-split metrics')
    return {'pairs': len(names), 'bands': ', '.join(b.name for b in bands), 'metrics': run_dir / 'metrics.csv'}


def _kind_win_rates(frame: pd.DataFrame, filters: Dict[str, str]) -> pd.DataFrame:
    """Harmonic-only vs percussive-only on tone clips, and the reverse on click clips."""
    rows = []
    for prefix, a, b in (('mono_', 'H', 'P'), ('perc_', 'P', 'H')):
        sub = frame[frame['clip'].str.startswith(prefix)]
        if sub.empty or not {a, b} <= set(sub['sections']):
            continue
        rows.append({'clips': prefix.rstrip('_'), 'better': a, 'than': b,
                     'win_rate': win_rate(sub, 'sections', a, b, 'mel', filters)})
    return pd.DataFrame(rows, columns=['clips', 'better', 'than', 'win_rate'])


def cmd_ablate_sections(args: argparse.Namespace, config: Dict[str, Any], run_dir: Path) -> Summary:
    """Section ablations of the codec (per branch) or of the estimators (HF band)."""
    codec = _require_codec(_codec_path(args, config, run_dir), config, args)
    corpus = ClipCorpus(_load_manifest(args, config), 'test')
    spec = _eval_spec(config)
    max_clips = args.max_clips if args.max_clips is not None else config['eval']['max_clips']
    if args.mode == 'codec':
        frame, summary = codec_ablation(codec, corpus, spec, max_clips)
        wins = _kind_win_rates(frame, {'input': 'global', 'branch': 'lf'})
    else:
        bank = _require_estimators(_estimators_path(args, config, run_dir), codec, config, args)
        settings = DecodeSettings.from_config(config['lm'], config['seed'])
        frame, summary = lm_ablation(codec, bank, corpus, settings, spec, config['eval']['lowpass_hz'], max_clips)
        wins = _kind_win_rates(frame, {})
    write_frame(run_dir / f"ablation_{args.mode}.csv", frame)
    write_frame(run_dir / f"ablation_{args.mode}_summary.csv", summary)
    write_frame(run_dir / 'win_rates.csv', wins)
    _print_frame(wins, 'section win rates (mel)')
    return {'mode': args.mode, 'clips': frame['clip'].nunique(), 'rows': len(frame)}


def cmd_gradcheck(args: argparse.Namespace, config: Dict[str, Any], run_dir: Path) -> Summary:
    """Finite-difference checks of every primitive and of tiny codec and estimator models."""
    results = run_gradchecks(seeded_rng(config['seed']), args.trials, args.samples)
    frame = pd.DataFrame([{'name': r.name, 'max_rel_error': r.max_rel_error, 'checked': r.checked,
                           'tolerance': r.tolerance, 'passed': r.passed} for r in results])
    write_frame(run_dir / 'gradcheck.csv', frame)
    failed = frame[~frame['passed']]
    if len(failed):
        _print_frame(failed, 'failed gradient checks')
        raise InvariantError(f"{len(failed)} gradient checks failed: {', '.join(failed['name'])}")
    return {'checks': len(frame), 'worst relative error': f"{frame['max_rel_error'].max():.2e}"}


def cmd_spectrogram(args: argparse.Namespace, config: Dict[str, Any], run_dir: Path) -> Summary:
    """Per-file spectrogram images plus one side-by-side grid."""
    paths = [Path(p) for p in args.wavs]
    clips = [read_wav(p) for p in paths]
    titles = args.titles.split(',') if args.titles else [p.stem for p in paths]
    if len(titles) != len(clips):
        raise ValidationError(f"{len(titles)} titles for {len(clips)} files", "titles")
    cfg = _spectrogram_cfg(config)
    for path, clip in zip(paths, clips):
        log_artifact('png', spectrogram_image(clip, cfg, run_dir / f"{path.stem}.png"))
    grid = spectrogram_grid(clips, titles, cfg, Path(args.out) if args.out else run_dir / 'spectrograms.png')
    log_artifact('png', grid)
    return {'images': len(clips), 'grid': grid}


COMMANDS: Dict[str, Callable[[argparse.Namespace, Dict[str, Any], Path], Summary]] = {
    'synth-data': cmd_synth_data,
    'hpr': cmd_hpr,
    'codec-train': cmd_codec_train,
    'encode': cmd_encode,
    'decode': cmd_decode,
    'lm-train': cmd_lm_train,
    'extend': cmd_extend,
    'eval': cmd_eval,
    'ablate-sections': cmd_ablate_sections,
    'gradcheck': cmd_gradcheck,
    'spectrogram': cmd_spectrogram,
}


# ---------------------------------------------------------------------- parser and output
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='hpx', description=__doc__.strip().splitlines()[0])
    parser.add_argument('--seed', type=int, default=None, help='Seed (overrides config and HPX_SEED)')
    parser.add_argument('--config', default=None, help='JSON file merged over the profile')
    parser.add_argument('--profile', choices=sorted(PROFILES), default='desk')
    parser.add_argument('--run-dir', default=None, help='Run directory (default <run_root>/<command>)')
    parser.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=JSON',
                        help='Override one setting, e.g. --set train.steps.lf=100')
    parser.add_argument('--allow-digest-mismatch', action='store_true',
                        help='Load checkpoints written under a different model configuration')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('synth-data', help='generate the synthetic corpus')
    p.add_argument('--out', default=None, help='Dataset directory (default <run_root>/data)')
    p.add_argument('--no-hpr', action='store_true', help='Skip the component cache')
    p.add_argument('--verify', action='store_true', help='Check an existing dataset against its manifest')

    p = sub.add_parser('hpr', help='harmonic/percussive/residual decomposition')
    p.add_argument('wav', nargs='?', default=None)
    p.add_argument('--manifest', default=None, help='Build the component cache of a dataset')
    p.add_argument('--out', default=None)

    p = sub.add_parser('codec-train', help='train one codec phase')
    p.add_argument('--phase', choices=PHASES, required=True)
    p.add_argument('--steps', type=int, default=None)
    p.add_argument('--manifest', default=None)
    p.add_argument('--checkpoint', default=None)
    p.add_argument('--resume', action='store_true')

    p = sub.add_parser('encode', help='WAV to token file')
    p.add_argument('wav')
    p.add_argument('--out', default=None)
    p.add_argument('--sections', default=None, help='Active sections, e.g. H,P (default all)')
    p.add_argument('--checkpoint', default=None)

    p = sub.add_parser('decode', help='token file to WAV')
    p.add_argument('tokens')
    p.add_argument('--out', default=None)
    p.add_argument('--sections', default=None, help='Decode from these sections only')
    p.add_argument('--checkpoint', default=None)

    p = sub.add_parser('lm-train', help='train the HF token estimators')
    p.add_argument('--steps', type=int, default=None)
    p.add_argument('--manifest', default=None)
    p.add_argument('--checkpoint', default=None)
    p.add_argument('--estimators', default=None)
    p.add_argument('--max-clips', type=int, default=0)
    p.add_argument('--resume', action='store_true')

    p = sub.add_parser('extend', help='bandwidth-extend a 16 kHz WAV')
    p.add_argument('wav')
    p.add_argument('--out', default=None)
    p.add_argument('--sections', default=None, help='Predicted sections to add (default all, "-" for none)')
    p.add_argument('--checkpoint', default=None)
    p.add_argument('--estimators', default=None)

    p = sub.add_parser('eval', help='band-split metrics between two WAV directories')
    p.add_argument('ref_dir')
    p.add_argument('est_dir')
    p.add_argument('--bands', default=None, help='e.g. global,lf,hf or name:lo-hi')
    p.add_argument('--upsample-to', type=int, default=None, metavar='RATE')

    p = sub.add_parser('ablate-sections', help='section ablations')
    p.add_argument('--mode', choices=('codec', 'lm'), required=True)
    p.add_argument('--manifest', default=None)
    p.add_argument('--checkpoint', default=None)
    p.add_argument('--estimators', default=None)
    p.add_argument('--max-clips', type=int, default=None)

    p = sub.add_parser('gradcheck', help='finite-difference gradient checks')
    p.add_argument('--trials', type=int, default=10)
    p.add_argument('--samples', type=int, default=20)

    p = sub.add_parser('spectrogram', help='spectrogram images')
    p.add_argument('wavs', nargs='+')
    p.add_argument('--titles', default=None, help='Comma-separated panel titles')
    p.add_argument('--out', default=None)
    return parser


def _print_frame(frame: pd.DataFrame, title: str) -> None:
    table = Table(title=title)
    for column in frame.columns:
        table.add_column(str(column))
    for row in frame.itertuples(index=False):
        table.add_row(*(f"{v:.4g}" if isinstance(v, (float, np.floating)) else str(v) for v in row))
    console.print(table)


def print_summary(command: str, summary: Summary, elapsed: float) -> None:
    table = Table(title=f"{command} ({humanize.naturaldelta(elapsed)})", show_header=False)
    table.add_column('key', style='bold')
    table.add_column('value')
    for key, value in summary.items():
        table.add_row(str(key), str(value))
    console.print(table)


def main(argv: Optional[List[str]] = None) -> int:
    """
    Main entry point for the application.

    Returns:
        Process exit code (argparse exits with 2 on usage errors before this returns)
    """
    args = build_parser().parse_args(argv)
    try:
        config = load_configuration(args.config, args.profile, args.overrides, args.seed)
        run_dir = run_directory(config, args.command, args.run_dir)
        logging_config = dict(config['logging'])
        if logging_config.get('log_file'):
            logging_config['log_file'] = str(run_dir / logging_config['log_file'])
        setup_logging(logging_config)
        write_resolved_config(config, run_dir)
        logger.info(f"Running {args.command} (profile={args.profile}, seed={config['seed']}, run dir={run_dir})")

        start = time.time()
        summary = COMMANDS[args.command](args, config, run_dir)
        elapsed = time.time() - start
        logger.info(f"{args.command} completed in {elapsed:.2f} seconds")
        print_summary(args.command, summary, elapsed)
        return 0

    except HpxError as e:
        logger.critical(f"{args.command} failed: {e}")
        err_console.print(f"[bold red]error:[/bold red] {e}")
        return 1
    except Exception as e:
        logger.critical(f"Application failed: {str(e)}", exc_info=True)
        err_console.print(f"[bold red]unexpected error:[/bold red] {e}")
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
