import numpy as np
import pytest
from PIL import Image

from src.dsp.filters import lowpass, median_filter_freq, median_filter_time, resample
from src.dsp.hpr import energy_fractions, hpr_decompose, hpr_masks
from src.dsp.io import read_wav, spectrogram_image, write_wav
from src.dsp.spectral import frame_layout, istft, mel_centers, mel_filterbank, overlap_add, stft, stft_array
from src.evaluation.bands import BandSpec, band_restrict_array
from src.models.audio import AudioClip, HprComponents, StftConfig
from src.models.base import ValidationError

RATE = 16000


def tone(freq, seconds=1.0, rate=RATE, amp=0.5):
    t = np.arange(int(seconds * rate)) / rate
    return amp * np.sin(2 * np.pi * freq * t)


def amplitude_at(x, freq, rate, trim=1000):
    """Least-squares amplitude of a sinusoid at ``freq`` over the interior of ``x``."""
    t = np.arange(x.size)[trim:-trim] / rate
    basis = np.stack([np.sin(2 * np.pi * freq * t), np.cos(2 * np.pi * freq * t)], axis=1)
    coef, *_ = np.linalg.lstsq(basis, x[trim:-trim], rcond=None)
    return float(np.hypot(*coef))


class TestStft:
    def test_round_trip_is_exact(self, rng):
        cfg = StftConfig(1024, 256, 1024)
        x = rng.standard_normal(5000)
        frames = stft_array(x, cfg)
        assert np.max(np.abs(overlap_add(frames, cfg, x.size) - x)) < 1e-6

    def test_round_trip_with_zero_padded_fft(self, rng):
        cfg = StftConfig(400, 100, 512)
        x = rng.standard_normal(3001)
        spec = stft(AudioClip(x, RATE), cfg)
        out = istft(spec)
        assert len(out) == x.size
        np.testing.assert_allclose(out.as_float64(), x.astype(np.float32), atol=1e-5)

    def test_frame_count(self):
        cfg = StftConfig(1024, 256, 1024)
        left, right, n_frames = frame_layout(16000, cfg)
        assert left == 768
        assert n_frames == int(np.ceil((16000 + 2 * 768 - 1024) / 256)) + 1
        assert stft_array(np.zeros(16000), cfg).shape == (n_frames, 513)

    def test_zero_signal_gives_zero_frames(self):
        assert not np.any(stft_array(np.zeros(2048), StftConfig()))

    def test_tone_peaks_at_expected_bin(self):
        frames = stft_array(tone(440.0), StftConfig(1024, 256, 1024))
        mid = frames[frames.shape[0] // 2]
        assert int(np.argmax(np.abs(mid))) == 28

    def test_too_short_input(self):
        with pytest.raises(ValidationError, match="too short"):
            stft(AudioClip(np.zeros(1000), RATE), StftConfig(1024, 256, 1024))

    def test_non_cola_hop_rejected_on_inverse(self):
        cfg = StftConfig(1024, 768, 1024)
        spec = stft(AudioClip(np.zeros(4096), RATE), cfg)
        with pytest.raises(ValidationError, match="COLA"):
            istft(spec)

    def test_fft_len_must_be_power_of_two(self):
        with pytest.raises(ValidationError):
            StftConfig(1000, 250, 1000)

    def test_hop_longer_than_window_rejected(self):
        with pytest.raises(ValidationError, match="skips samples"):
            StftConfig(256, 512, 512)


class TestMelFilterbank:
    def test_rows_positive_with_increasing_centers(self):
        fb = mel_filterbank(1024, 80, 24000)
        assert fb.shape == (80, 513)
        assert np.all(fb.sum(axis=1) > 0)
        assert np.all(np.diff(mel_centers(80, 24000)) > 0)

    def test_too_many_filters(self):
        with pytest.raises(ValidationError, match="n_mels"):
            mel_filterbank(32, 40, 16000)


class TestMedianFilters:
    def test_monotone_row_unchanged(self):
        row = np.array([[1.0, 2.0, 3.0, 4.0, 5.0]])
        np.testing.assert_array_equal(median_filter_time(row, 3), row)

    def test_isolated_spike_removed(self):
        np.testing.assert_array_equal(median_filter_time(np.array([[0.0, 10.0, 0.0]]), 3), np.zeros((1, 3)))
        np.testing.assert_array_equal(median_filter_freq(np.array([[0.0], [10.0], [0.0]]), 3), np.zeros((3, 1)))

    def test_time_and_frequency_are_transposes(self, rng):
        mag = rng.random((12, 9))
        np.testing.assert_array_equal(median_filter_time(mag, 5), median_filter_freq(mag.T, 5).T)

    @pytest.mark.parametrize("length", [2, 4, 1])
    def test_length_must_be_odd(self, length):
        with pytest.raises(ValidationError):
            median_filter_time(np.ones((2, 6)), length)


class TestHpr:
    def test_components_sum_to_input(self, rng):
        clip = AudioClip(0.3 * rng.standard_normal(8000) + tone(300.0, 0.5), RATE)
        parts = hpr_decompose(clip)
        total = sum(c.as_float64() for c in parts.as_tuple())
        np.testing.assert_allclose(total, clip.as_float64(), atol=1e-5)
        assert all(len(c) == len(clip) and c.sample_rate == RATE for c in parts.as_tuple())

    def test_masks_partition_every_cell(self, rng):
        masks = hpr_masks(rng.random((20, 33)), 5, 5, 2.0)
        total = masks.harmonic.astype(int) + masks.percussive.astype(int) + masks.residual.astype(int)
        assert np.all(total == 1)

    def test_stationary_tone_is_harmonic(self):
        fractions = energy_fractions(hpr_decompose(AudioClip(tone(440.0, 2.0), RATE)))
        assert fractions['harmonic'] >= 0.9

    def test_click_train_is_percussive(self):
        x = np.zeros(2 * RATE)
        x[::RATE // 10] = 1.0
        fractions = energy_fractions(hpr_decompose(AudioClip(x, RATE)))
        assert fractions['percussive'] >= 0.85

    def test_beta_below_one_rejected(self):
        with pytest.raises(ValidationError, match="beta"):
            hpr_masks(np.ones((4, 4)), 3, 3, 0.5)

    def test_components_must_share_length(self):
        with pytest.raises(ValidationError, match="one length"):
            HprComponents(AudioClip(np.zeros(8), RATE), AudioClip(np.zeros(8), RATE), AudioClip(np.zeros(9), RATE))


class TestResample:
    def test_equal_rate_is_bitwise_identity(self, rng):
        clip = AudioClip(rng.standard_normal(1000), RATE)
        out = resample(clip, RATE)
        assert out is not clip
        np.testing.assert_array_equal(out.samples, clip.samples)

    def test_output_length(self):
        clip = AudioClip(np.zeros(16001), RATE)
        assert len(resample(clip, 48000)) == 48003
        assert len(resample(clip, 24000)) == int(round(16001 * 1.5))

    def test_passband_amplitude_preserved(self):
        out = resample(AudioClip(tone(1000.0), RATE), 48000)
        assert abs(amplitude_at(out.as_float64(), 1000.0, 48000, trim=3000) - 0.5) / 0.5 < 0.005

    def test_up_down_round_trip(self, rng):
        noise = band_restrict_array(rng.standard_normal(RATE), RATE, BandSpec('low', 0.0, 7000.0))
        clip = AudioClip(0.3 * noise / np.max(np.abs(noise)), RATE)
        back = resample(resample(clip, 48000), RATE).as_float64()
        ref = clip.as_float64()
        core = slice(1000, -1000)
        err = np.linalg.norm(back[core] - ref[core]) / np.linalg.norm(ref[core])
        assert err < 1e-3

    def test_non_positive_target_rejected(self):
        with pytest.raises(ValidationError, match="positive"):
            resample(AudioClip(np.zeros(100), RATE), 0)


class TestLowpass:
    def test_dc_unchanged(self):
        clip = AudioClip(np.full(4000, 0.3), RATE)
        np.testing.assert_allclose(lowpass(clip, 2000.0).samples, clip.samples, atol=1e-6)

    def test_passband_and_stopband(self):
        passed = lowpass(AudioClip(tone(1000.0), RATE), 3000.0).as_float64()
        assert abs(amplitude_at(passed, 1000.0, RATE) - 0.5) / 0.5 < 0.01
        stopped = lowpass(AudioClip(tone(6000.0), RATE), 3000.0).as_float64()
        assert 20 * np.log10(amplitude_at(stopped, 6000.0, RATE) / 0.5) <= -60

    def test_length_preserved(self):
        assert len(lowpass(AudioClip(np.zeros(777), RATE), 1000.0)) == 777

    def test_cutoff_at_nyquist_rejected(self):
        with pytest.raises(ValidationError, match="Nyquist"):
            lowpass(AudioClip(np.zeros(100), RATE), 8000.0)


class TestIo:
    def test_wav_round_trip(self, tmp_path, rng):
        clip = AudioClip(0.5 * rng.uniform(-1, 1, 800), RATE)
        path = write_wav(tmp_path / 'a.wav', clip, subtype='FLOAT')
        back = read_wav(path)
        assert back.sample_rate == RATE
        np.testing.assert_array_equal(back.samples, clip.samples)

    def test_spectrogram_image_dimensions(self, tmp_path):
        cfg = StftConfig(64, 16, 64)
        clip = AudioClip(np.zeros(640), RATE)
        path = spectrogram_image(clip, cfg, tmp_path / 'spec.png')
        _, _, n_frames = frame_layout(640, cfg)
        with Image.open(path) as img:
            assert img.size == (n_frames, cfg.n_bins)
            pixels = np.asarray(img)
        assert np.all(pixels == pixels[0, 0])
