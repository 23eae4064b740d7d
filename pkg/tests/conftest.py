"""
Shared fixtures: seeded generators, tiny model configurations and a tiny on-disk
dataset at the tiny codec's rate.
"""

import json

import numpy as np
import pytest

from src.codec.hpcodec import HpCodec
from src.generators.dataset import HprSettings, build_dataset, synth_specs
from src.models.audio import StftConfig
from src.models.codec_config import tiny_codec_config
from src.utils.config import load_configuration

TINY_RATE = 1200

# Configuration overrides matching tiny_codec_config / tiny_estimator_config
TINY_OVERRIDES = {
    'dsp': {
        'hpr': {'window_len': 64, 'hop': 16, 'fft_len': 64, 't_len': 5, 'f_len': 5, 'beta': 2.0},
        'spectrogram': {'window_len': 64, 'hop': 16, 'fft_len': 64},
    },
    'codec': {
        'lf': {'sample_rate': 400, 'encoder_rates': [2, 2], 'base_channels': 2, 'latent_dim': 4, 'max_channels': 4},
        'hf': {'sample_rate': TINY_RATE, 'encoder_rates': [2, 6], 'base_channels': 2, 'latent_dim': 4,
               'max_channels': 4},
        'codebook_size': 8,
        'resample': {'taps_per_phase': 16, 'kaiser_beta': 8.0, 'cutoff_frac': 0.9},
        'kmeans_iters': 2,
        'kmeans_batches': 1,
    },
    'lm': {'d_model': 8, 'layers': 1, 'heads': 2, 'ffn_dim': 16, 'max_frames': 32},
    'loss': {'stft_windows': [32], 'mel_windows': [[32, 4]]},
    'train': {
        'batch_size': 2, 'crop_seconds': 0.2, 'steps': {'lf': 3, 'hf': 3, 'finetune': 2, 'lm': 3},
        'lm_batch_size': 2, 'lm_crop_frames': 16, 'checkpoint_every': 2, 'log_every': 1, 'smoothing': 2,
    },
    'data': {
        'counts': {'monophonic': 3, 'polyphonic': 2, 'percussive': 3},
        'duration': 0.5,
        'sample_rate': TINY_RATE,
        'test_fraction': 0.34,
        'synth': {'f0_min': 40.0, 'f0_max': 80.0, 'n_partials': 4, 'burst_ms': 10.0, 'click_rate': 4.0},
    },
    'eval': {'stft_windows': [64], 'mel_windows': [[64, 8]], 'lowpass_hz': 150.0},
    'logging': {'log_level': 'WARNING'},
}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_codec():
    return HpCodec(tiny_codec_config(), np.random.default_rng(0))


@pytest.fixture
def tiny_config_file(tmp_path):
    path = tmp_path / 'tiny.json'
    path.write_text(json.dumps(dict(TINY_OVERRIDES, run_root=str(tmp_path / 'runs'))), encoding='utf-8')
    return path


@pytest.fixture
def tiny_config(tiny_config_file):
    return load_configuration(str(tiny_config_file), use_environment=False)


@pytest.fixture(scope='session')
def tiny_dataset(tmp_path_factory):
    """Eight clips at 1200 Hz with their component cache."""
    out = tmp_path_factory.mktemp('tiny_data')
    data = TINY_OVERRIDES['data']
    specs = synth_specs(data)
    hpr = HprSettings(StftConfig(64, 16, 64), 5, 5, 2.0)
    return build_dataset(specs, data['counts'], out, seed=3, test_fraction=data['test_fraction'], hpr=hpr)
