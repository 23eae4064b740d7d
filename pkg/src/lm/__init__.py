"""
Token estimators for bandwidth extension: LF tokens in, HF tokens out.
"""

from src.lm.estimator import Estimator, EstimatorBank, build_inputs, forward, load_estimators
from src.lm.inference import DecodeSettings, extend, predict_hf, section_selective_extend
from src.lm.training import LmTrainer, TokenCorpus, lm_train_step

__all__ = [
    'Estimator', 'EstimatorBank', 'build_inputs', 'forward', 'load_estimators', 'DecodeSettings',
    'extend', 'predict_hf', 'section_selective_extend', 'LmTrainer', 'TokenCorpus', 'lm_train_step',
]
