"""
Adam optimizer and learning-rate schedules.

The schedule is stepped once per optimizer step. Parameters whose ``grad`` is
``None`` after backward are skipped entirely (no moment update, no step count),
which is what keeps frozen branches and inactive quantizer sections bitwise intact.
"""

import math
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np

from src.autodiff.nn import Parameter
from src.models.base import BaseModel, ShapeError, ValidationError


@dataclass
class AdamState:
    """Moment buffers and step count of one parameter."""
    m: np.ndarray
    v: np.ndarray
    step: int = 0


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> np.ndarray:
    """
    One bias-corrected Adam update. ``state`` is updated in place.

    Returns:
        The updated parameter array (same dtype as ``param``)
    """
    if grad.shape != param.shape or state.m.shape != param.shape:
        raise ShapeError('adam_step', param.shape, grad.shape, state.m.shape)
    state.step += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = state.m / (1.0 - beta1 ** state.step)
    v_hat = state.v / (1.0 - beta2 ** state.step)
    return (param - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(param.dtype)


class Adam:
    """
    Adam over an ordered parameter list.

    Moments are kept in float64 regardless of the parameter precision so a resumed
    run reproduces an uninterrupted one exactly.
    """

    def __init__(self, params: Sequence[Parameter], beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params: List[Parameter] = list(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.states: Dict[int, AdamState] = {}
        self.steps_taken = 0

    def _state(self, index: int) -> AdamState:
        if index not in self.states:
            shape = self.params[index].shape
            self.states[index] = AdamState(np.zeros(shape), np.zeros(shape))
        return self.states[index]

    def step(self, lr: float) -> int:
        """Apply one update; returns how many parameters had a gradient."""
        updated = 0
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            p.data = adam_step(p.data, p.grad.astype(np.float64), self._state(i), lr,
                               self.beta1, self.beta2, self.eps)
            updated += 1
        self.steps_taken += 1
        return updated

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        out = {'steps_taken': np.asarray([self.steps_taken], dtype=np.float64)}
        for i, s in sorted(self.states.items()):
            out[f"{i}.m"] = s.m
            out[f"{i}.v"] = s.v
            out[f"{i}.step"] = np.asarray([s.step], dtype=np.float64)
        return out

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        self.steps_taken = int(state['steps_taken'][0])
        self.states = {}
        for key in state:
            if key.endswith('.m'):
                i = int(key[:-2])
                self.states[i] = AdamState(np.asarray(state[key], dtype=np.float64),
                                           np.asarray(state[f"{i}.v"], dtype=np.float64),
                                           int(state[f"{i}.step"][0]))


@dataclass(frozen=True)
class LrSchedule(BaseModel):
    """Exponential (``base * gamma**step``) or cosine annealing schedule."""
    kind: str = 'exponential'
    base_lr: float = 1e-4
    gamma: float = 0.999996
    total_steps: int = 1

    def __post_init__(self):
        self.check()

    def _validate_fields(self):
        if self.kind not in ('exponential', 'cosine'):
            raise ValidationError(f"unknown schedule kind {self.kind!r}", "kind")
        if self.base_lr <= 0:
            raise ValidationError("base_lr must be > 0", "base_lr")
        if self.kind == 'exponential' and not 0 < self.gamma < 1:
            raise ValidationError("gamma must be in (0, 1)", "gamma")
        if self.kind == 'cosine' and self.total_steps < 1:
            raise ValidationError("total_steps must be >= 1", "total_steps")

    def _validate_business_rules(self):
        pass


def lr_at(schedule: LrSchedule, step: int) -> float:
    if schedule.kind == 'exponential':
        return schedule.base_lr * schedule.gamma ** step
    progress = min(step, schedule.total_steps) / schedule.total_steps
    return schedule.base_lr * (1.0 + math.cos(math.pi * progress)) / 2.0
