import numpy as np
import pytest

from src.autodiff import functional as F
from src.autodiff.gradcheck import PRIMITIVE_OPS, check_all_primitives, relative_error
from src.autodiff.nn import Linear, Module, Parameter
from src.autodiff.optim import Adam, LrSchedule, adam_step, AdamState, lr_at
from src.autodiff.rng import restore_rng, rng_state, spawn
from src.autodiff.tensor import Tensor, no_grad, precision, set_debug_checks
from src.models.base import InvariantError, ShapeError, TapeError, ValidationError


class Pair(Module):
    def __init__(self, rng):
        self.first = Linear(3, 2, rng)
        self.blocks = [Linear(2, 2, rng), Linear(2, 1, rng)]


class TestTape:
    def test_gradient_of_simple_expression(self):
        x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
        (x * x).sum().backward()
        np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0])

    def test_gradients_accumulate_across_shared_nodes(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = x * 3.0
        (y + y).sum().backward()
        np.testing.assert_allclose(x.grad, [6.0])

    def test_backward_needs_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(TapeError, match="scalar"):
            (x * 2.0).backward()

    def test_second_backward_raises(self):
        x = Tensor(np.ones(3), requires_grad=True)
        loss = (x * 2.0).sum()
        loss.backward()
        with pytest.raises(TapeError, match="consumed"):
            loss.backward()

    def test_no_grad_builds_no_graph(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            y = (x * 2.0).sum()
        assert not y.requires_grad
        with pytest.raises(TapeError):
            y.backward()

    def test_detach_stops_gradient(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        (x * x.detach()).sum().backward()
        np.testing.assert_allclose(x.grad, [1.0, 2.0])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))

    def test_precision_switch(self):
        with precision('float64'):
            assert Tensor([1.0]).data.dtype == np.float64
        assert Tensor([1.0]).data.dtype == np.float32

    def test_debug_checks_catch_non_finite_values(self):
        set_debug_checks(True)
        try:
            with pytest.raises(InvariantError, match="log"):
                Tensor(np.array([-1.0])).log()
        finally:
            set_debug_checks(False)


class TestPrimitiveGradients:
    def test_every_primitive_matches_finite_differences(self):
        results = check_all_primitives(np.random.default_rng(7), trials=3)
        assert {r.name for r in results} == set(PRIMITIVE_OPS)
        failed = [(r.name, r.max_rel_error) for r in results if not r.passed]
        assert not failed

    def test_relative_error_floor(self):
        assert relative_error(0.0, 0.0) == 0.0
        assert relative_error(1.0, 1.1) == pytest.approx(0.1 / 1.1)

    def test_cross_entropy_of_uniform_logits(self):
        logits = Tensor(np.zeros((2, 5, 8)))
        ce = F.cross_entropy(logits, np.zeros((2, 5), dtype=int))
        assert float(ce.data) == pytest.approx(np.log(8), rel=1e-6)


class TestModule:
    def test_named_parameters_walk_lists_in_order(self, rng):
        names = [n for n, _ in Pair(rng).named_parameters()]
        assert names[0].startswith('first.')
        assert names[-1].startswith('blocks.1.')
        assert len(names) == len(set(names))

    def test_state_dict_round_trip_and_checksum(self, rng):
        a, b = Pair(rng), Pair(rng)
        assert a.checksum() != b.checksum()
        b.load_state_dict(a.state_dict())
        assert a.checksum() == b.checksum()
        assert a.checksum('blocks.') != a.checksum('first.')

    def test_strict_load_rejects_unknown_names(self, rng):
        model = Pair(rng)
        state = dict(model.state_dict(), extra=np.zeros(1))
        with pytest.raises(ValidationError, match="unexpected"):
            model.load_state_dict(state)


class TestOptimizer:
    def test_parameters_without_grad_are_untouched(self, rng):
        used = Parameter(np.ones(3))
        frozen = Parameter(np.ones(3))
        opt = Adam([used, frozen])
        used.grad = np.ones(3)
        assert opt.step(1e-2) == 1
        np.testing.assert_array_equal(frozen.data, np.ones(3))
        assert np.all(used.data < 1.0)
        assert 1 not in opt.states

    def test_first_step_moves_by_learning_rate(self):
        state = AdamState(np.zeros(2), np.zeros(2))
        out = adam_step(np.zeros(2), np.array([0.5, -2.0]), state, lr=0.1)
        np.testing.assert_allclose(out, [-0.1, 0.1], rtol=1e-6)
        assert state.step == 1

    def test_state_dict_round_trip(self):
        p = Parameter(np.zeros(2))
        opt = Adam([p])
        p.grad = np.ones(2)
        opt.step(0.1)
        other = Adam([Parameter(np.zeros(2))])
        other.load_state_dict(opt.state_dict())
        assert other.steps_taken == 1
        np.testing.assert_array_equal(other.states[0].m, opt.states[0].m)

    def test_schedules(self):
        exp = LrSchedule('exponential', 1e-3, 0.5)
        assert lr_at(exp, 2) == pytest.approx(2.5e-4)
        cos = LrSchedule('cosine', 1e-3, total_steps=10)
        assert lr_at(cos, 0) == pytest.approx(1e-3)
        assert lr_at(cos, 10) == pytest.approx(0.0, abs=1e-12)
        with pytest.raises(ValidationError):
            LrSchedule('step')


class TestRng:
    def test_state_round_trip(self):
        rng = np.random.default_rng(5)
        state = rng_state(rng)
        first = rng.random(4)
        np.testing.assert_array_equal(restore_rng(state).random(4), first)

    def test_spawn_is_deterministic(self):
        a = [g.random() for g in spawn(np.random.default_rng(1), 3)]
        b = [g.random() for g in spawn(np.random.default_rng(1), 3)]
        assert a == b
