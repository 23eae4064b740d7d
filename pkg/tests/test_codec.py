import numpy as np
import pytest

from src.codec.branch import decode_branch, encode_branch
from src.codec.hpcodec import (HpCodec, codec_checkpoint, codec_forward, decode_pair, hf_residual_input, load_codec,
                               section_ablation_decode)
from src.models.audio import AudioClip
from src.models.base import PreconditionError, ValidationError
from src.models.codec_config import tiny_codec_config
from src.models.tokens import SEMANTIC_SECTIONS, Section
from src.utils.persistence import Checkpoint, save_checkpoint


@pytest.fixture
def clip(rng):
    return AudioClip(0.3 * rng.standard_normal(250), 1200)


def test_forward_lengths_and_alignment(tiny_codec, clip):
    out = codec_forward(tiny_codec, clip)
    assert len(out.reconstruction) == len(clip)
    assert out.reconstruction.sample_rate == 1200
    assert out.lf_input.sample_rate == 400
    assert out.lf_tokens.n_frames == out.hf_tokens.n_frames == 21
    assert out.lf_tokens.sections == SEMANTIC_SECTIONS


@pytest.mark.parametrize("length", [1, 13, 25, 37, 251])
def test_streams_align_for_any_length(tiny_codec, rng, length):
    clip = AudioClip(0.3 * rng.standard_normal(length), 1200)
    out = codec_forward(tiny_codec, clip)
    assert out.lf_tokens.n_frames == out.hf_tokens.n_frames == -(-length // 12)
    assert len(out.reconstruction) == len(out.hf_input) == len(out.lf_upsampled) == length
    assert out.hf_tokens.length == length
    assert len(hf_residual_input(tiny_codec, clip)) == length


def test_decode_pair_matches_forward(tiny_codec, rng):
    out = codec_forward(tiny_codec, AudioClip(0.3 * rng.standard_normal(37), 1200))
    decoded = decode_pair(tiny_codec, out.lf_tokens, out.hf_tokens)
    assert len(decoded) == 37
    np.testing.assert_allclose(decoded.as_float64(), out.reconstruction.as_float64(), atol=1e-6)


def test_reconstruction_is_lf_upsampled_plus_hf(tiny_codec, clip):
    out = codec_forward(tiny_codec, clip)
    total = out.lf_upsampled.as_float64() + out.hf_reconstruction.as_float64()
    np.testing.assert_allclose(out.reconstruction.as_float64(), total, atol=1e-6)
    np.testing.assert_allclose(out.hf_input.as_float64(),
                               clip.as_float64() - out.lf_upsampled.as_float64(), atol=1e-6)


def test_forward_is_deterministic(tiny_codec, clip):
    a, b = codec_forward(tiny_codec, clip), codec_forward(tiny_codec, clip)
    np.testing.assert_array_equal(a.lf_tokens.codes, b.lf_tokens.codes)
    np.testing.assert_array_equal(a.reconstruction.samples, b.reconstruction.samples)


def test_inactive_sections_carry_zero_codes(tiny_codec, clip):
    out = codec_forward(tiny_codec, clip, (Section.HARMONIC,))
    assert out.lf_tokens.active == (True, False, False)
    assert not np.any(out.lf_tokens.codes[1:])
    assert out.hf_tokens.active_sections() == (Section.HARMONIC,)


def test_token_path_matches_latent_path(tiny_codec, rng):
    lf_clip = AudioClip(0.3 * rng.standard_normal(120), 400)
    encoded = encode_branch(tiny_codec.lf, lf_clip)
    from_tokens = decode_branch(tiny_codec.lf, encoded.tokens)
    from_latent = decode_branch(tiny_codec.lf, encoded.latent, length=len(lf_clip))
    np.testing.assert_array_equal(from_tokens.samples, from_latent.samples)


def test_section_ablation_decode_shapes(tiny_codec, clip):
    lf_clip = AudioClip(clip.samples[:100], 400)
    for sections in [SEMANTIC_SECTIONS, (Section.PERCUSSIVE,), ()]:
        assert len(section_ablation_decode(tiny_codec, lf_clip, sections, 'lf')) == 100
    assert len(section_ablation_decode(tiny_codec, clip, (Section.RESIDUAL,), 'hf')) == len(clip)
    assert len(hf_residual_input(tiny_codec, clip)) == len(clip)


def test_wrong_rate_rejected(tiny_codec):
    with pytest.raises(ValidationError, match="1200 Hz"):
        codec_forward(tiny_codec, AudioClip(np.zeros(400), 400))


def test_single_section_codec(rng):
    codec = HpCodec(tiny_codec_config('single'), np.random.default_rng(0))
    out = codec_forward(codec, AudioClip(0.3 * rng.standard_normal(240), 1200))
    assert out.lf_tokens.sections == (Section.FULL,)


def test_checkpoint_round_trip(tiny_codec, tmp_path):
    tiny_codec.trained_phases = {'lf'}
    path = save_checkpoint(tmp_path / 'codec.hpck', codec_checkpoint(tiny_codec, 'abc'))
    loaded = load_codec(path, tiny_codec_config(), 'abc')
    assert loaded.checksum() == tiny_codec.checksum()
    assert loaded.trained_phases == {'lf'}


def test_load_rejects_other_checkpoints(tmp_path):
    path = save_checkpoint(tmp_path / 'other.hpck', Checkpoint('abc', {}, {}, {'kind': 'estimators'}))
    with pytest.raises(PreconditionError):
        load_codec(path, tiny_codec_config())
