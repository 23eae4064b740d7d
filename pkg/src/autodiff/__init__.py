"""
Tensor-autodiff: numpy-backed tensors with a single-use reverse-mode tape, the
module system, Adam, learning-rate schedules and gradient checking.
"""

from src.autodiff.nn import Conv1d, ConvTranspose1d, Embedding, LayerNorm, Linear, Module, Parameter
from src.autodiff.optim import Adam, AdamState, LrSchedule, adam_step, lr_at
from src.autodiff.rng import seeded_rng, uniform_choice
from src.autodiff.tensor import Tape, Tensor, no_grad, precision, set_debug_checks

__all__ = [
    'Tensor', 'Tape', 'precision', 'no_grad', 'set_debug_checks',
    'Module', 'Parameter', 'Linear', 'Conv1d', 'ConvTranspose1d', 'Embedding', 'LayerNorm',
    'Adam', 'AdamState', 'LrSchedule', 'adam_step', 'lr_at',
    'seeded_rng', 'uniform_choice',
]
