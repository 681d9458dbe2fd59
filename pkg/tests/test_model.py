"""Tests for the gated CRNN and the Adam optimizer."""

from dataclasses import replace

import numpy as np
import pytest

from src.autodiff import Tape, backward
from src.errors import NumericalError
from src.model import (
    adam_step,
    fit_scaler,
    forward,
    forward_batch,
    init_state,
    n_params,
    param_layout,
    predict,
)
from src.types import Activation, MelSpectrogram, ModelConfig, PoolingHead


def _features(rng, batch=2, frames=8, mels=8):
    return rng.standard_normal((batch, frames, mels))


def _loss(flat, config, x, w_strong, w_weak):
    strong, weak = forward_batch(flat, config, x)
    return (strong * w_strong).sum() + (weak * w_weak).sum()


class TestLayout:
    def test_contiguous_slots(self, tiny_model_config):
        offset = 0
        for slot in param_layout(tiny_model_config).values():
            assert slot.offset == offset
            offset += slot.size
        assert offset == n_params(tiny_model_config)

    def test_glu_doubles_conv_outputs(self, tiny_model_config):
        glu = param_layout(tiny_model_config)
        cg = param_layout(replace(tiny_model_config, activation=Activation.CG))
        assert glu["conv0.w"].shape == (4, 1, 3, 3)
        assert cg["conv0.w"].shape == (2, 1, 3, 3)
        assert "gate0.w" in cg and "gate0.w" not in glu

    def test_mean_head_has_no_attention(self, tiny_model_config):
        layout = param_layout(replace(tiny_model_config, pooling_head=PoolingHead.MEAN))
        assert "attention.w" not in layout

    def test_init_biases_zero(self, tiny_model_config):
        state = init_state(tiny_model_config, seed=0)
        for name, slot in param_layout(tiny_model_config).items():
            values = state.params[slot.offset : slot.offset + slot.size]
            if slot.fan is None:
                assert not values.any(), name
            else:
                assert np.abs(values).max() <= np.sqrt(6.0 / sum(slot.fan))

    def test_init_deterministic(self, tiny_model_config):
        a = init_state(tiny_model_config, seed=3).params
        np.testing.assert_array_equal(a, init_state(tiny_model_config, seed=3).params)


class TestConfig:
    def test_channels_per_block(self):
        with pytest.raises(ValueError, match="one width per conv block"):
            ModelConfig(n_mels=8, n_classes=2, conv_blocks=2, channels=(4,))

    def test_pool_factor_power_of_two(self):
        with pytest.raises(ValueError, match="power of two"):
            ModelConfig(n_mels=8, n_classes=2, conv_blocks=2, channels=(2, 2), pool_factor=3)

    def test_pool_factor_bounded_by_blocks(self):
        with pytest.raises(ValueError, match="cannot exceed"):
            ModelConfig(n_mels=8, n_classes=2, conv_blocks=1, channels=(2,), pool_factor=4)

    def test_mels_divisible(self):
        with pytest.raises(ValueError, match="divisible"):
            ModelConfig(n_mels=10, n_classes=2, conv_blocks=2, channels=(2, 2))

    def test_dict_round_trip(self, tiny_model_config):
        assert ModelConfig.from_dict(tiny_model_config.to_dict()) == tiny_model_config


class TestForward:
    def test_output_shapes_and_range(self, tiny_model_config):
        state = init_state(tiny_model_config, seed=0)
        x = _features(np.random.default_rng(0), batch=3, frames=12)
        strong, weak = forward_batch(Tape(record=False).watch(state.params), state.config, x)
        assert strong.shape == (3, 6, 2)
        assert weak.shape == (3, 2)
        assert ((strong.value > 0) & (strong.value < 1)).all()

    def test_mean_head_is_frame_average(self, tiny_model_config):
        config = replace(tiny_model_config, pooling_head=PoolingHead.MEAN)
        state = init_state(config, seed=1)
        x = _features(np.random.default_rng(1))
        strong, weak = forward_batch(Tape(record=False).watch(state.params), config, x)
        np.testing.assert_allclose(weak.value, strong.value.mean(axis=1))

    def test_attention_weak_within_frame_range(self, tiny_model_config):
        state = init_state(tiny_model_config, seed=2)
        x = _features(np.random.default_rng(2))
        strong, weak = forward_batch(Tape(record=False).watch(state.params), state.config, x)
        assert (weak.value <= strong.value.max(axis=1) + 1e-12).all()
        assert (weak.value >= strong.value.min(axis=1) - 1e-12).all()

    def test_batch_matches_single_clip(self, tiny_model_config):
        state = init_state(tiny_model_config, seed=0)
        x = _features(np.random.default_rng(4), batch=3)
        clips = [MelSpectrogram(frames, 0.016) for frames in x]
        batched = predict(state, clips, batch_size=2)
        single = forward(state, clips[1]).prediction
        np.testing.assert_allclose(batched[1].strong, single.strong, atol=1e-12)
        np.testing.assert_allclose(batched[1].weak, single.weak, atol=1e-12)

    def test_rejects_bad_shapes(self, tiny_model_config):
        state = init_state(tiny_model_config, seed=0)
        flat = Tape(record=False).watch(state.params)
        with pytest.raises(ValueError, match="shape"):
            forward_batch(flat, tiny_model_config, np.zeros((1, 8, 16)))
        with pytest.raises(ValueError, match="pool_factor"):
            forward_batch(flat, tiny_model_config, np.zeros((1, 7, 8)))

    def test_scaler_standardizes(self, tiny_model_config):
        rng = np.random.default_rng(5)
        clips = [MelSpectrogram(rng.normal(3.0, 2.0, (8, 8)), 0.016) for _ in range(4)]
        scaler = fit_scaler(clips)
        frames = np.concatenate([c.frames for c in clips])
        scaled = scaler.apply(frames)
        np.testing.assert_allclose(scaled.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(scaled.std(axis=0), 1.0)


class TestGradients:
    @pytest.mark.parametrize("activation", list(Activation))
    @pytest.mark.parametrize("head", list(PoolingHead))
    def test_matches_finite_differences(self, tiny_model_config, activation, head):
        config = replace(tiny_model_config, activation=activation, pooling_head=head)
        rng = np.random.default_rng(6)
        params = init_state(config, seed=6).params
        x = _features(rng)
        w_strong = rng.standard_normal((2, 4, 2))
        w_weak = rng.standard_normal((2, 2))

        tape = Tape()
        grad = backward(tape, _loss(tape.watch(params), config, x, w_strong, w_weak))

        def value(p):
            return float(_loss(Tape(record=False).watch(p), config, x, w_strong, w_weak).value)

        eps = 1e-6
        for i in rng.choice(params.size, size=25, replace=False):
            step = np.zeros_like(params)
            step[i] = eps
            numeric = (value(params + step) - value(params - step)) / (2 * eps)
            assert grad[i] == pytest.approx(numeric, rel=1e-4, abs=1e-7)


class TestAdam:
    def test_first_step_moves_by_lr(self, tiny_model_config):
        state = init_state(tiny_model_config, seed=0)
        grad = np.sign(np.random.default_rng(0).standard_normal(state.params.size))
        updated = adam_step(state, grad, lr=1e-3)
        np.testing.assert_allclose(updated.params - state.params, -1e-3 * grad, rtol=1e-4)
        assert updated.adam.t == 1

    def test_moments_carry_over(self, tiny_model_config):
        state = init_state(tiny_model_config, seed=0)
        grad = np.ones(state.params.size)
        twice = adam_step(adam_step(state, grad, 1e-3), grad, 1e-3)
        assert twice.adam.t == 2
        np.testing.assert_allclose(twice.adam.m, 0.19 * grad)

    def test_non_finite_gradient(self, tiny_model_config):
        state = init_state(tiny_model_config, seed=0)
        grad = np.zeros(state.params.size)
        grad[3] = np.nan
        with pytest.raises(NumericalError, match="index 3"):
            adam_step(state, grad, 1e-3)

    def test_shape_mismatch(self, tiny_model_config):
        state = init_state(tiny_model_config, seed=0)
        with pytest.raises(ValueError, match="gradient shape"):
            adam_step(state, np.zeros(3), 1e-3)
