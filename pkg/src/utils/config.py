"""
Configuration loading: built-in profiles, user JSON files, environment overrides
and schema validation.

A resolved configuration is a nested dict with the sections ``dsp``, ``codec``,
``lm``, ``loss``, ``train``, ``data``, ``eval`` and ``logging`` plus the top-level
``seed`` and ``run_root``. Resolution order (later wins):

1. the chosen profile (``desk`` or ``paper``)
2. the user's JSON file, deep-merged
3. ``--set section.key=value`` overrides from the command line
4. environment variables ``HPX_SEED``, ``HPX_LOG_LEVEL``, ``HPX_RUN_ROOT`` (after ``.env``)
"""

import copy
import hashlib
import json
import os
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

import jsonschema
from dotenv import load_dotenv

from src.models.base import ConfigError
from src.utils.logging import get_logger

logger = get_logger(__name__)

MODEL_SECTIONS = ('codec', 'lm')

# HF rates with an encoder layout that keeps 100 frames/s
HF_RATE_PRESETS = {48000: [2, 5, 6, 8], 32000: [2, 2, 5, 8]}

_DESK: Dict[str, Any] = {
    'seed': 0,
    'run_root': 'runs',
    'dsp': {
        'hpr': {'window_len': 1024, 'hop': 256, 'fft_len': 1024, 't_len': 17, 'f_len': 17, 'beta': 2.0},
        'lowpass_taps': 255,
        'spectrogram': {'window_len': 1024, 'hop': 256, 'fft_len': 1024},
    },
    'codec': {
        'lf': {'sample_rate': 16000, 'encoder_rates': [2, 2, 5, 8], 'base_channels': 32,
               'latent_dim': 64, 'max_channels': 256},
        'hf': {'sample_rate': 48000, 'encoder_rates': [2, 5, 6, 8], 'base_channels': 32,
               'latent_dim': 64, 'max_channels': 256},
        'codebook_size': 1024,
        'n_codebooks': 2,
        'sections': 'hpr',
        'resample': {'taps_per_phase': 64, 'kaiser_beta': 14.0, 'cutoff_frac': 0.9},
        'kmeans_iters': 10,
        'kmeans_batches': 4,
    },
    'lm': {
        'd_model': 256, 'layers': 4, 'heads': 8, 'ffn_dim': 1024, 'max_frames': 256, 'dropout': 0.0,
        'semantic_training': True, 'shared_estimator': False, 'all_lf_streams': False,
        'decode': 'greedy', 'temperature': 1.0, 'top_k': 0,
    },
    'loss': {
        'weights': {'mel': 15.0, 'stft': 1.0, 'waveform': 1.0, 'codebook': 1.0, 'commitment': 0.25},
        'stft_windows': [2048, 512],
        'mel_windows': [[64, 10], [256, 40], [1024, 160]],
    },
    'train': {
        'batch_size': 16,
        'crop_seconds': 0.38,
        'steps': {'lf': 2000, 'hf': 2000, 'finetune': 2000, 'lm': 5000},
        'lr': {'lf': 1e-4, 'hf': 1e-4, 'finetune': 5e-5, 'lm': 1e-4},
        'gamma': 0.999996,
        'lm_batch_size': 8,
        'lm_crop_frames': 250,
        'checkpoint_every': 250,
        'log_every': 50,
        'smoothing': 50,
    },
    'data': {
        'counts': {'monophonic': 700, 'polyphonic': 700, 'percussive': 600},
        'duration': 2.5,
        'sample_rate': 48000,
        'test_fraction': 0.1,
        'workers': 1,
        'synth': {'f0_min': 110.0, 'f0_max': 880.0, 'n_partials': 20, 'partial_decay': 0.85,
                  'n_voices': 4, 'click_rate': 8.0, 'click_mode': 'periodic', 'burst_ms': 5.0,
                  'amplitude_jitter': 0.1},
    },
    'eval': {
        'bands': 'global,lf,hf',
        'stft_windows': [2048, 512],
        'mel_windows': [[32, 5], [64, 10], [128, 20], [256, 40], [512, 80], [1024, 160], [2048, 320]],
        'lowpass_hz': 7200.0,
        'workers': 1,
        'max_clips': 0,
    },
    'logging': {'log_level': 'INFO', 'log_format': '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
                'log_file': 'run.log'},
}

_PAPER_OVERRIDES: Dict[str, Any] = {
    'codec': {'lf': {'base_channels': 64, 'latent_dim': 1024, 'max_channels': 1024},
              'hf': {'base_channels': 64, 'latent_dim': 1024, 'max_channels': 1024}},
    'lm': {'d_model': 1024, 'layers': 6, 'heads': 8, 'ffn_dim': 4096, 'max_frames': 256},
    'loss': {'mel_windows': [[32, 5], [64, 10], [128, 20], [256, 40], [512, 80], [1024, 160], [2048, 320]]},
    'train': {'batch_size': 32},
}

_BRANCH_SCHEMA = {
    'type': 'object',
    'required': ['sample_rate', 'encoder_rates', 'base_channels', 'latent_dim'],
    'properties': {
        'sample_rate': {'type': 'integer', 'minimum': 1},
        'encoder_rates': {'type': 'array', 'items': {'type': 'integer', 'minimum': 1}, 'minItems': 1},
        'base_channels': {'type': 'integer', 'minimum': 1},
        'latent_dim': {'type': 'integer', 'minimum': 1},
        'max_channels': {'type': 'integer', 'minimum': 1},
    },
}

CONFIG_SCHEMA = {
    'type': 'object',
    'required': ['seed', 'run_root', 'dsp', 'codec', 'lm', 'loss', 'train', 'data', 'eval', 'logging'],
    'properties': {
        'seed': {'type': 'integer', 'minimum': 0},
        'run_root': {'type': 'string'},
        'codec': {
            'type': 'object',
            'required': ['lf', 'hf', 'codebook_size', 'n_codebooks', 'sections'],
            'properties': {
                'lf': _BRANCH_SCHEMA,
                'hf': _BRANCH_SCHEMA,
                'codebook_size': {'type': 'integer', 'minimum': 2, 'maximum': 65536},
                'n_codebooks': {'type': 'integer', 'minimum': 1},
                'sections': {'enum': ['hpr', 'single']},
                'kmeans_iters': {'type': 'integer', 'minimum': 0},
                'kmeans_batches': {'type': 'integer', 'minimum': 0},
                'hf_rate': {'enum': sorted(HF_RATE_PRESETS)},
            },
        },
        'lm': {
            'type': 'object',
            'required': ['d_model', 'layers', 'heads', 'ffn_dim', 'max_frames'],
            'properties': {
                'd_model': {'type': 'integer', 'minimum': 1},
                'layers': {'type': 'integer', 'minimum': 1},
                'heads': {'type': 'integer', 'minimum': 1},
                'ffn_dim': {'type': 'integer', 'minimum': 1},
                'max_frames': {'type': 'integer', 'minimum': 2},
                'dropout': {'type': 'number', 'minimum': 0, 'exclusiveMaximum': 1},
                'semantic_training': {'type': 'boolean'},
                'shared_estimator': {'type': 'boolean'},
                'all_lf_streams': {'type': 'boolean'},
                'decode': {'enum': ['greedy', 'sample']},
                'temperature': {'type': 'number', 'exclusiveMinimum': 0},
                'top_k': {'type': 'integer', 'minimum': 0},
            },
        },
        'loss': {
            'type': 'object',
            'required': ['weights', 'stft_windows', 'mel_windows'],
            'properties': {
                'weights': {'type': 'object', 'additionalProperties': {'type': 'number', 'minimum': 0}},
                'stft_windows': {'type': 'array', 'items': {'type': 'integer'}, 'minItems': 1},
                'mel_windows': {'type': 'array', 'minItems': 1,
                                'items': {'type': 'array', 'items': {'type': 'integer'},
                                          'minItems': 2, 'maxItems': 2}},
            },
        },
        'train': {
            'type': 'object',
            'properties': {
                'batch_size': {'type': 'integer', 'minimum': 1},
                'crop_seconds': {'type': 'number', 'exclusiveMinimum': 0},
                'gamma': {'type': 'number', 'exclusiveMinimum': 0, 'exclusiveMaximum': 1},
                'checkpoint_every': {'type': 'integer', 'minimum': 0},
                'log_every': {'type': 'integer', 'minimum': 1},
            },
        },
        'data': {
            'type': 'object',
            'properties': {
                'counts': {'type': 'object', 'additionalProperties': {'type': 'integer', 'minimum': 0}},
                'duration': {'type': 'number', 'exclusiveMinimum': 0},
                'sample_rate': {'type': 'integer', 'minimum': 1},
                'test_fraction': {'type': 'number', 'minimum': 0, 'maximum': 1},
            },
        },
        'logging': {
            'type': 'object',
            'properties': {'log_level': {'enum': ['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL']}},
        },
    },
}

PROFILES = {'desk': None, 'paper': _PAPER_OVERRIDES}


def deep_merge(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    """Recursively merge ``update`` into a copy of ``base`` (dicts merge, everything else replaces)."""
    out = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def profile_config(profile: str = 'desk') -> Dict[str, Any]:
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    overrides = PROFILES[profile]
    return deep_merge(_DESK, overrides) if overrides else copy.deepcopy(_DESK)


def parse_override(text: str) -> Dict[str, Any]:
    """``train.steps.lf=100`` -> ``{'train': {'steps': {'lf': 100}}}`` (value parsed as JSON when possible)."""
    if '=' not in text:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    dotted, raw = text.split('=', 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    out: Dict[str, Any] = {}
    cursor = out
    keys = dotted.strip().split('.')
    for key in keys[:-1]:
        cursor = cursor.setdefault(key, {})
    cursor[keys[-1]] = value
    return out


def apply_environment(config: Dict[str, Any]) -> Dict[str, Any]:
    load_dotenv()
    if os.getenv('HPX_SEED'):
        try:
            config['seed'] = int(os.environ['HPX_SEED'])
        except ValueError:
            raise ConfigError(f"HPX_SEED must be an integer, got {os.environ['HPX_SEED']!r}") from None
    if os.getenv('HPX_LOG_LEVEL'):
        config['logging']['log_level'] = os.environ['HPX_LOG_LEVEL'].upper()
    if os.getenv('HPX_RUN_ROOT'):
        config['run_root'] = os.environ['HPX_RUN_ROOT']
    return config


def apply_hf_rate(config: Dict[str, Any]) -> Dict[str, Any]:
    """
    Honour ``codec.hf_rate``: set the HF branch rate and encoder layout, the corpus
    rate, and cap the partial count of the synthetic sources below the new Nyquist.
    """
    rate = config['codec'].get('hf_rate')
    if rate is None:
        return config
    if rate not in HF_RATE_PRESETS:
        raise ConfigError(f"codec.hf_rate must be one of {sorted(HF_RATE_PRESETS)}, got {rate}")
    config['codec']['hf']['sample_rate'] = rate
    config['codec']['hf']['encoder_rates'] = list(HF_RATE_PRESETS[rate])
    config['data']['sample_rate'] = rate
    synth = config['data'].setdefault('synth', {})
    f0_max = float(synth.get('f0_max', 880.0))
    synth['n_partials'] = min(int(synth.get('n_partials', 20)), int((rate / 2 - 1) // f0_max))
    return config


def validate_config(config: Dict[str, Any]) -> None:
    try:
        jsonschema.validate(config, CONFIG_SCHEMA)
    except jsonschema.ValidationError as e:
        where = '.'.join(str(p) for p in e.absolute_path) or '<root>'
        raise ConfigError(f"invalid configuration at {where}: {e.message}") from None


def load_configuration(path: Optional[str] = None, profile: str = 'desk',
                       overrides: Iterable[str] = (), seed: Optional[int] = None,
                       use_environment: bool = True) -> Dict[str, Any]:
    """
    Resolve and validate the configuration of a run.

    Args:
        path: Optional JSON file deep-merged over the profile
        profile: ``desk`` or ``paper``
        overrides: ``section.key=value`` strings
        seed: Explicit seed (``--seed``); wins over every other source
        use_environment: Apply ``HPX_*`` environment variables

    Returns:
        Resolved configuration dict

    Raises:
        ConfigError: unreadable file, bad override or schema violation
    """
    config = profile_config(profile)
    if path:
        try:
            user = json.loads(Path(path).read_text(encoding='utf-8'))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config file {path}: {e}") from None
        if not isinstance(user, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        config = deep_merge(config, user)
    for text in overrides:
        config = deep_merge(config, parse_override(text))
    if use_environment:
        config = apply_environment(config)
    if seed is not None:
        config['seed'] = int(seed)
    config = apply_hf_rate(config)
    config['profile'] = profile
    validate_config(config)
    logger.debug(f"configuration resolved (profile={profile}, digest={config_digest(config)[:12]})")
    return config


def config_digest(config: Dict[str, Any]) -> str:
    """sha256 of the canonical JSON of the model-shaping sections."""
    shaping = {k: config.get(k) for k in MODEL_SECTIONS}
    return hashlib.sha256(json.dumps(shaping, sort_keys=True, separators=(',', ':')).encode()).hexdigest()


def write_resolved_config(config: Dict[str, Any], run_dir: Path) -> Path:
    path = Path(run_dir) / 'resolved_config.json'
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(config, indent=2, sort_keys=True) + '\n', encoding='utf-8')
    return path
