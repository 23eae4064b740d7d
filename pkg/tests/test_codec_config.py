import pytest

from src.models.base import ValidationError
from src.models.codec_config import BranchConfig, CodecConfig, codec_token_rates, token_rate

LF = BranchConfig(16000, (2, 4, 5, 4))
HF = BranchConfig(48000, (2, 5, 6, 8))


def test_branch_hop_and_frame_rate():
    assert LF.hop == 160 and LF.frame_rate == 100
    assert HF.hop == 480 and HF.frame_rate == 100


def test_lf_token_rate():
    rate = token_rate(LF)
    assert rate.frames_per_second == 100
    assert rate.bits_per_second == 6000
    assert rate.compression_ratio == pytest.approx(42.67, abs=0.01)


def test_codec_compression_ratio_counts_both_branches():
    rates = codec_token_rates(CodecConfig(LF, HF))
    assert rates['codec'].compression_ratio == pytest.approx(64.0)
    assert rates['lf'].bits_per_second == 6000


def test_single_section_layout_counts_one_chain():
    rates = codec_token_rates(CodecConfig(LF, HF, sections='single'))
    assert rates['lf'].bits_per_second == 2000


def test_channel_plan_is_capped():
    assert BranchConfig(16000, (2, 4, 5, 4), 32, 64, 128).channel_plan() == (32, 64, 128, 128, 128)


def test_frame_rates_must_match():
    with pytest.raises(ValidationError, match="frame rates differ"):
        CodecConfig(LF, BranchConfig(48000, (2, 4, 5, 4)))


def test_hf_rate_must_exceed_lf():
    with pytest.raises(ValidationError):
        CodecConfig(LF, LF)


def test_non_integral_frame_rate():
    with pytest.raises(ValidationError, match="integral"):
        BranchConfig(16000, (3, 7))
