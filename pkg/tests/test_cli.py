import numpy as np
import pandas as pd
import pytest

from src.dsp.io import write_wav
from src.main import main
from src.models.audio import AudioClip


@pytest.fixture
def cli(tiny_config_file, tmp_path):
    """Run the command line with the tiny configuration; returns the exit code."""
    def run(*argv):
        return main(['--config', str(tiny_config_file), '--seed', '0', *argv])
    return run


def test_unknown_flag_is_usage_error(cli):
    with pytest.raises(SystemExit) as exc:
        cli('synth-data', '--bogus')
    assert exc.value.code == 2


def test_missing_command_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


def test_hf_phase_needs_lf_checkpoint(cli, tmp_path):
    assert cli('codec-train', '--phase', 'hf') == 1
    log = (tmp_path / 'runs' / 'codec-train' / 'run.log').read_text(encoding='utf-8')
    assert 'train LF phase first' in log


def test_bad_override_fails(cli):
    assert cli('--set', 'codec.sections=stereo', 'gradcheck') == 1


def test_eval_on_identical_directories(cli, tmp_path, rng):
    ref_dir, est_dir = tmp_path / 'ref', tmp_path / 'est'
    for name in ('a', 'b'):
        clip = AudioClip(0.3 * rng.uniform(-1, 1, 4800), 48000)
        write_wav(ref_dir / f"{name}.wav", clip, subtype='FLOAT')
        write_wav(est_dir / f"{name}.wav", clip, subtype='FLOAT')
    run_dir = tmp_path / 'eval'
    assert cli('--run-dir', str(run_dir), 'eval', str(ref_dir), str(est_dir)) == 0
    metrics = pd.read_csv(run_dir / 'metrics.csv')
    assert sorted(metrics['clip'].unique()) == ['a', 'b']
    assert set(metrics['band']) == {'Global', 'LF', 'HF'}
    assert np.all(metrics[['mel', 'stft', 'waveform_l1']].to_numpy() == 0.0)
    assert (run_dir / 'resolved_config.json').exists()


def test_eval_without_shared_files(cli, tmp_path):
    (tmp_path / 'ref').mkdir()
    (tmp_path / 'est').mkdir()
    assert cli('eval', str(tmp_path / 'ref'), str(tmp_path / 'est')) == 1


def test_synth_data_and_verify(cli, tmp_path):
    out = tmp_path / 'data'
    assert cli('synth-data', '--out', str(out), '--no-hpr') == 0
    clips = pd.read_csv(tmp_path / 'runs' / 'synth-data' / 'clips.csv')
    assert len(clips) == 8
    assert cli('synth-data', '--out', str(out), '--verify') == 0

    victim = out / clips['path'].iloc[0]
    blob = bytearray(victim.read_bytes())
    blob[-1] ^= 0x40
    victim.write_bytes(bytes(blob))
    assert cli('synth-data', '--out', str(out), '--verify') == 1


def test_hpr_on_one_file(cli, tmp_path):
    t = np.arange(2400) / 1200
    source = write_wav(tmp_path / 'tone.wav', AudioClip(0.5 * np.sin(2 * np.pi * 60.0 * t), 1200))
    assert cli('hpr', str(source), '--out', str(tmp_path / 'parts')) == 0
    assert sorted(p.name for p in (tmp_path / 'parts').iterdir()) == [
        'tone_harmonic.wav', 'tone_percussive.wav', 'tone_residual.wav']


@pytest.mark.slow
def test_full_pipeline(cli, tmp_path):
    runs = tmp_path / 'runs'
    assert cli('synth-data') == 0
    for phase in ('lf', 'hf', 'finetune'):
        assert cli('codec-train', '--phase', phase) == 0
    assert (runs / 'codec-train' / 'codec.hpck').exists()

    clip = sorted((runs / 'data' / 'clips').glob('mono_*.wav'))[0]
    assert cli('encode', str(clip), '--out', str(tmp_path / 'clip.hptk')) == 0
    assert cli('decode', str(tmp_path / 'clip.hptk'), '--out', str(tmp_path / 'clip.wav')) == 0

    assert cli('lm-train') == 0
    assert (runs / 'lm-train' / 'estimators.hpck').exists()

    t = np.arange(200) / 400
    narrow = write_wav(tmp_path / 'narrow.wav', AudioClip(0.5 * np.sin(2 * np.pi * 50.0 * t), 400))
    assert cli('extend', str(narrow), '--out', str(tmp_path / 'wide.wav')) == 0
    assert (tmp_path / 'wide.png').exists()

    assert cli('ablate-sections', '--mode', 'codec') == 0
    frame = pd.read_csv(runs / 'ablate-sections' / 'ablation_codec.csv')
    assert frame['clip'].nunique() == 3
