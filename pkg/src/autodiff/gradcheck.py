"""
Finite-difference gradient checking for primitive ops and whole models.

Checks run in double precision with central differences (``h = 1e-5``). The error
of one entry is ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``; the
floor keeps entries with vanishing gradients from reporting roundoff as error.
Stop-gradient values and discrete code selections are recorded at the base point
and replayed for every perturbed evaluation.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from src.autodiff import functional as F
from src.autodiff import tensor as T
from src.autodiff.nn import Module
from src.autodiff.tensor import Tensor, hold_constants, no_grad, precision
from src.utils.logging import get_logger

logger = get_logger(__name__)

DEFAULT_STEP = 1e-5
DEFAULT_FLOOR = 1e-6
OP_TOLERANCE = 1e-4
MODEL_TOLERANCE = 5e-3

LossFn = Callable[[List[Tensor]], Tensor]
OpBuilder = Callable[[np.random.Generator], Tuple[LossFn, List[np.ndarray]]]


@dataclass
class GradCheckResult:
    """Outcome of one gradient check."""
    name: str
    max_rel_error: float
    checked: int
    tolerance: float
    worst: Dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error < self.tolerance)


def relative_error(analytic: float, numeric: float, floor: float = DEFAULT_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _weighted(rng: np.random.Generator, fn: Callable[..., Tensor]) -> LossFn:
    """Reduce an op output to a scalar with fixed random weights."""
    cache = {}

    def loss(tensors: List[Tensor]) -> Tensor:
        out = fn(*tensors)
        if 'w' not in cache:
            cache['w'] = rng.normal(size=out.shape)
        return (out * cache['w']).sum()
    return loss


def _away_from_zero(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.uniform(0.2, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def _build_ops() -> Dict[str, OpBuilder]:
    ops: Dict[str, OpBuilder] = {}

    def register(name):
        def wrap(builder):
            ops[name] = builder
            return builder
        return wrap

    @register('add')
    def _(rng):
        return _weighted(rng, T.add), [rng.normal(size=(3, 4)), rng.normal(size=(4,))]

    @register('sub')
    def _(rng):
        return _weighted(rng, T.sub), [rng.normal(size=(2, 3)), rng.normal(size=(2, 1))]

    @register('mul')
    def _(rng):
        return _weighted(rng, T.mul), [rng.normal(size=(3, 4)), rng.normal(size=(3, 4))]

    @register('div')
    def _(rng):
        return _weighted(rng, T.div), [rng.normal(size=(3, 4)), _away_from_zero(rng, (3, 4)) * 2]

    @register('matmul')
    def _(rng):
        return _weighted(rng, T.matmul), [rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5))]

    @register('tanh')
    def _(rng):
        return _weighted(rng, T.tanh), [rng.normal(size=(4, 5))]

    @register('elu')
    def _(rng):
        return _weighted(rng, T.elu), [_away_from_zero(rng, (4, 5))]

    @register('exp')
    def _(rng):
        return _weighted(rng, T.exp), [rng.normal(size=(6,))]

    @register('log')
    def _(rng):
        return _weighted(rng, T.log), [rng.uniform(0.5, 2.0, size=(6,))]

    @register('sqrt')
    def _(rng):
        return _weighted(rng, T.sqrt), [rng.uniform(0.5, 2.0, size=(6,))]

    @register('abs')
    def _(rng):
        return _weighted(rng, T.absolute), [_away_from_zero(rng, (6,))]

    @register('pow')
    def _(rng):
        return _weighted(rng, lambda a: T.power(a, 3.0)), [rng.normal(size=(5,))]

    @register('sum')
    def _(rng):
        return _weighted(rng, lambda a: a.sum(axis=1)), [rng.normal(size=(3, 4))]

    @register('mean')
    def _(rng):
        return _weighted(rng, lambda a: a.mean(axis=(0, 2), keepdims=True)), [rng.normal(size=(2, 3, 4))]

    @register('softmax')
    def _(rng):
        return _weighted(rng, F.softmax), [rng.normal(size=(3, 6))]

    @register('log_softmax')
    def _(rng):
        return _weighted(rng, F.log_softmax), [rng.normal(size=(3, 6))]

    @register('layer_norm')
    def _(rng):
        return (_weighted(rng, F.layer_norm),
                [rng.normal(size=(2, 3, 8)), rng.normal(size=(8,)), rng.normal(size=(8,))])

    @register('embedding')
    def _(rng):
        idx = rng.integers(0, 7, size=(2, 5))
        return _weighted(rng, lambda t: F.embedding(t, idx)), [rng.normal(size=(7, 4))]

    @register('concat')
    def _(rng):
        return (_weighted(rng, lambda a, b: T.concat([a, b], axis=1)),
                [rng.normal(size=(2, 3)), rng.normal(size=(2, 5))])

    @register('slice')
    def _(rng):
        return _weighted(rng, lambda a: a[:, 1:5:2]), [rng.normal(size=(3, 7))]

    @register('gather')
    def _(rng):
        idx = np.array([0, 2, 2, 4])
        return _weighted(rng, lambda a: a[idx]), [rng.normal(size=(5, 3))]

    @register('reshape_transpose')
    def _(rng):
        return _weighted(rng, lambda a: a.reshape(4, 6).transpose(1, 0)), [rng.normal(size=(2, 3, 4))]

    @register('cross_entropy')
    def _(rng):
        targets = rng.integers(0, 9, size=(2, 5))
        mask = (rng.random((2, 5)) > 0.3).astype(float)
        return (lambda ts: F.cross_entropy(ts[0], targets, mask)), [rng.normal(size=(2, 5, 9))]

    @register('conv1d')
    def _(rng):
        return (_weighted(rng, lambda x, w, b: F.conv1d(x, w, b, stride=2, padding=(2, 1))),
                [rng.normal(size=(2, 3, 17)), rng.normal(size=(4, 3, 4)), rng.normal(size=(4,))])

    @register('conv_transpose1d')
    def _(rng):
        return (_weighted(rng, lambda x, w, b: F.conv_transpose1d(x, w, b, stride=3, crop=(2, 1))),
                [rng.normal(size=(2, 4, 6)), rng.normal(size=(4, 3, 6)), rng.normal(size=(3,))])

    @register('gelu')
    def _(rng):
        return _weighted(rng, F.gelu), [rng.normal(size=(4, 5))]

    @register('pad_replicate')
    def _(rng):
        return _weighted(rng, lambda a: F.pad_replicate(a, 3, 2)), [rng.normal(size=(2, 6))]

    @register('straight_through')
    def _(rng):
        q = rng.normal(size=(3, 4))
        return _weighted(rng, lambda a: F.straight_through(a, q)), [rng.normal(size=(3, 4))]

    return ops


PRIMITIVE_OPS = _build_ops()


def _evaluate(loss_fn: LossFn, arrays: Sequence[np.ndarray], held_values: list) -> float:
    with no_grad(), hold_constants('replay', held_values):
        return float(loss_fn([Tensor(a) for a in arrays]).data)


def _sample_indices(shape, rng: np.random.Generator, limit: int) -> List[tuple]:
    size = int(np.prod(shape))
    flat = np.arange(size) if size <= limit else rng.choice(size, size=limit, replace=False)
    return [np.unravel_index(int(i), shape) for i in flat]


def check_function(name: str, loss_fn: LossFn, arrays: List[np.ndarray], rng: np.random.Generator,
                   h: float = DEFAULT_STEP, per_input: int = 24,
                   tolerance: float = OP_TOLERANCE) -> GradCheckResult:
    """Compare tape gradients of ``loss_fn`` with central differences on every input."""
    with precision('float64'):
        arrays = [np.array(a, dtype=np.float64) for a in arrays]
        tensors = [Tensor(a, requires_grad=True) for a in arrays]
        with hold_constants('record', []) as held_values:
            loss = loss_fn(tensors)
        loss.backward()
        worst, checked = 0.0, 0
        for t, a in zip(tensors, arrays):
            analytic = t.grad if t.grad is not None else np.zeros_like(a)
            for index in _sample_indices(a.shape, rng, per_input):
                original = a[index]
                a[index] = original + h
                plus = _evaluate(loss_fn, arrays, held_values)
                a[index] = original - h
                minus = _evaluate(loss_fn, arrays, held_values)
                a[index] = original
                err = relative_error(float(analytic[index]), (plus - minus) / (2 * h))
                worst = max(worst, err)
                checked += 1
    return GradCheckResult(name, worst, checked, tolerance)


def check_primitive(name: str, rng: np.random.Generator, trials: int = 10) -> GradCheckResult:
    """Run ``trials`` random gradient checks of one registered op."""
    builder = PRIMITIVE_OPS[name]
    worst, checked = 0.0, 0
    for _ in range(trials):
        with precision('float64'):
            loss_fn, arrays = builder(rng)
        result = check_function(name, loss_fn, arrays, rng)
        worst = max(worst, result.max_rel_error)
        checked += result.checked
    return GradCheckResult(name, worst, checked, OP_TOLERANCE)


def check_all_primitives(rng: np.random.Generator, trials: int = 10) -> List[GradCheckResult]:
    results = [check_primitive(name, rng, trials) for name in PRIMITIVE_OPS]
    for r in results:
        logger.debug(f"gradcheck {r.name}: max rel err {r.max_rel_error:.2e} over {r.checked} entries")
    return results


def check_model(name: str, model: Module, loss_fn: Callable[[], Tensor], rng: np.random.Generator,
                samples: int = 20, h: float = DEFAULT_STEP, prefixes: Sequence[str] = ('',),
                tolerance: float = MODEL_TOLERANCE) -> GradCheckResult:
    """
    Whole-model check on ``samples`` randomly chosen scalar parameters.

    The model must already be in double precision (``Module.to_dtype``) and
    ``loss_fn`` must be deterministic.

    Args:
        name: Label for logs and reports
        model: Module whose parameters are perturbed
        loss_fn: Builds the scalar loss from the current parameters
        rng: Chooses the sampled parameter entries
        prefixes: Restrict sampling to parameters under these names
    """
    named = [(n, p) for n, p in model.named_parameters() if any(n.startswith(x) for x in prefixes)]
    model.zero_grad()
    with precision('float64'):
        with hold_constants('record', []) as held_values:
            loss = loss_fn()
        loss.backward()
        candidates = [(n, p) for n, p in named if p.grad is not None and np.any(p.grad != 0)] or named
        worst, worst_at = 0.0, {}
        for _ in range(samples):
            pname, p = candidates[int(rng.integers(len(candidates)))]
            index = tuple(int(rng.integers(s)) for s in p.shape)
            analytic = float(p.grad[index]) if p.grad is not None else 0.0
            original = p.data[index]
            with no_grad(), hold_constants('replay', held_values):
                p.data[index] = original + h
                plus = float(loss_fn().data)
                p.data[index] = original - h
                minus = float(loss_fn().data)
            p.data[index] = original
            err = relative_error(analytic, (plus - minus) / (2 * h))
            if err > worst:
                worst, worst_at = err, {'parameter': pname, 'analytic': analytic,
                                        'numeric': (plus - minus) / (2 * h)}
    model.zero_grad()
    result = GradCheckResult(name, worst, samples, tolerance, worst_at)
    logger.info(f"gradcheck {name}: max rel err {worst:.2e} over {samples} parameters")
    return result
