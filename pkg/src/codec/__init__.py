"""
Two-branch codec: branch models, the coupled codec, differentiable losses and the
cascade trainer.
"""

from src.codec.branch import BranchModel, decode_branch, encode_branch
from src.codec.hpcodec import HpCodec, codec_forward, decode_pair, load_codec, section_ablation_decode
from src.codec.training import CodecTrainer, codec_train_phase, sample_iteration_kind

__all__ = [
    'BranchModel', 'encode_branch', 'decode_branch', 'HpCodec', 'codec_forward', 'decode_pair', 'load_codec',
    'section_ablation_decode', 'CodecTrainer', 'codec_train_phase', 'sample_iteration_kind',
]
