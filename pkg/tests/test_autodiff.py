"""Gradient checks for the reverse-mode tape."""

import numpy as np
import pytest

from src.autodiff import Tape, avg_pool2d, backward, concat, conv2d, softmax, stack
from src.errors import TapeConsumedError


def numeric_grad(fn, x, eps=1e-6):
    grad = np.zeros_like(x)
    for i in range(x.size):
        step = np.zeros_like(x)
        step.flat[i] = eps
        grad.flat[i] = (fn(x + step) - fn(x - step)) / (2 * eps)
    return grad


def check(build, x, rtol=1e-5, atol=1e-7):
    """Compare the tape gradient of build(tensor) against central differences."""
    tape = Tape()
    analytic = backward(tape, build(tape.watch(x)))

    def value(v):
        return float(build(Tape(record=False).watch(v)).value)

    np.testing.assert_allclose(analytic, numeric_grad(value, x), rtol=rtol, atol=atol)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


class TestElementwise:
    def test_arithmetic(self, rng):
        a = rng.standard_normal((3, 4))
        check(lambda p: ((p[:12].reshape(3, 4) * a + 2.0) ** 2.0 / 3.0 - p[12]).sum(),
              rng.standard_normal(13))

    def test_nonlinearities(self, rng):
        check(lambda p: (p.sigmoid() * p.tanh() + p.exp() * 0.1).sum(), rng.standard_normal(6))

    def test_log_and_clip(self, rng):
        x = rng.uniform(0.2, 0.8, 5)
        check(lambda p: p.clip(0.1, 0.9).log().mean(), x)

    def test_matmul_broadcast(self, rng):
        b = rng.standard_normal((2, 3, 4))

        def build(p):
            w = p[:8].reshape(4, 2)
            bias = p[8:]
            return (p.tape.constant(b) @ w + bias).tanh().sum()

        check(build, rng.standard_normal(10))

    def test_fancy_index_accumulates(self, rng):
        idx = np.array([0, 2, 2, 1, 2])
        tape = Tape()
        flat = tape.watch(rng.standard_normal(3))
        grad = backward(tape, flat[idx].sum())
        np.testing.assert_array_equal(grad, [1.0, 1.0, 3.0])


class TestStructural:
    def test_concat_and_stack(self, rng):
        def build(p):
            a, b = p[:4].reshape(2, 2), p[4:].reshape(2, 2)
            joined = concat([a, b.sigmoid()], axis=1)
            stacked = stack([a, b * 3.0], axis=1)
            return (joined * joined).sum() + stacked.tanh().sum()

        check(build, rng.standard_normal(8))

    def test_softmax(self, rng):
        weights = rng.standard_normal((2, 5))
        check(lambda p: (softmax(p.reshape(2, 5), axis=1) * weights).sum(),
              rng.standard_normal(10))

    def test_softmax_rows_sum_to_one(self, rng):
        out = softmax(Tape().constant(rng.standard_normal((3, 4)) * 50), axis=1)
        np.testing.assert_allclose(out.value.sum(axis=1), 1.0)

    def test_conv_and_pool(self, rng):
        x = rng.standard_normal((2, 2, 4, 6))
        weights = rng.standard_normal((2, 3, 2, 3))

        def build(p):
            w = p[:54].reshape(3, 2, 3, 3)
            bias = p[54:57]
            y = conv2d(p.tape.constant(x), w, bias)
            return (avg_pool2d(y, 2, 2) * weights).sum()

        check(build, rng.standard_normal(57) * 0.3)

    def test_conv_input_gradient(self, rng):
        w = rng.standard_normal((1, 1, 3, 3))

        def build(p):
            x = p.reshape(1, 1, 3, 4)
            return (conv2d(x, p.tape.constant(w), p.tape.constant(np.zeros(1))) ** 2.0).sum()

        check(build, rng.standard_normal(12))

    def test_pool_shape_mismatch(self):
        with pytest.raises(ValueError, match="pool"):
            avg_pool2d(Tape().constant(np.zeros((1, 1, 3, 4))), 2, 2)


class TestTape:
    def test_backward_once(self):
        tape = Tape()
        loss = (tape.watch(np.ones(2)) * 2.0).sum()
        backward(tape, loss)
        with pytest.raises(TapeConsumedError):
            backward(tape, loss)

    def test_unrecorded_tape_builds_no_graph(self):
        tape = Tape(record=False)
        out = (tape.watch(np.ones(3)) * 2.0).sum()
        assert not out.requires_grad
        np.testing.assert_array_equal(backward(tape, out), np.zeros(3))

    def test_scalar_loss_required(self):
        tape = Tape()
        with pytest.raises(ValueError, match="scalar"):
            backward(tape, tape.watch(np.ones(2)) * 1.0)

    def test_single_watch(self):
        tape = Tape()
        tape.watch(np.ones(1))
        with pytest.raises(ValueError, match="exactly one"):
            tape.watch(np.ones(1))

    def test_loss_grad_scales(self):
        tape = Tape()
        grad = backward(tape, (tape.watch(np.array([1.0, 2.0])) ** 2.0).sum(), loss_grad=0.5)
        np.testing.assert_allclose(grad, [1.0, 2.0])
