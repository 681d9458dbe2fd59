"""Tests for the loss stack, EMA teacher and schedules."""

import math

import numpy as np
import pytest

from src.augment import apply_steps, transport_policy
from src.autodiff import Tape, backward
from src.dsp import extract_features
from src.model import forward_batch, init_state
from src.semisup import (
    LossParts,
    Schedule,
    binary_cross_entropy,
    consistency_loss,
    ema_update,
    learning_rate,
    meanteacher_loss,
    rampup,
    supervised_loss,
    total_loss,
)
from src.types import (
    LossWeights,
    Method,
    ModelConfig,
    ModelState,
    PolicyStep,
    TeacherState,
    TransformId,
)


def _value(x):
    return x.item() if hasattr(x, "item") else float(x)


class TestSupervised:
    def test_half_predictions(self):
        """BCE of 0.5 is ln 2 per term, strong plus weak gives 2 ln 2."""
        strong = np.full((2, 4, 3), 0.5)
        weak = np.full((1, 3), 0.5)
        labels_s = np.random.default_rng(0).integers(0, 2, (2, 4, 3))
        loss = supervised_loss(strong, labels_s, weak, np.array([[1, 0, 1]]))
        assert _value(loss) == pytest.approx(2 * math.log(2))

    def test_single_cell(self):
        loss = binary_cross_entropy(np.array([0.25]), np.array([1.0]))
        assert loss.item() == pytest.approx(-math.log(0.25))

    def test_clamped(self):
        loss = binary_cross_entropy(np.array([0.0]), np.array([1.0]))
        assert loss.item() == pytest.approx(-math.log(1e-7))

    def test_empty_sets_contribute_zero(self):
        loss = supervised_loss(np.zeros((0, 4, 2)), np.zeros((0, 4, 2)), None, None)
        assert _value(loss) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            binary_cross_entropy(np.full((2, 3), 0.5), np.zeros((3, 2)))

    def test_gradient(self):
        tape = Tape()
        p = tape.watch(np.array([0.2, 0.7]))
        grad = backward(tape, binary_cross_entropy(p, np.array([1.0, 0.0])))
        np.testing.assert_allclose(grad, [-1 / (2 * 0.2), 1 / (2 * 0.3)])


class TestMeanTeacher:
    def test_hand_case(self):
        loss = meanteacher_loss(
            np.array([[[0.2], [0.6]]]),
            np.array([[[0.5], [0.6]]]),
            np.array([[0.4]]),
            np.array([[0.6]]),
        )
        # strong (0.09 + 0) / 2 plus weak 0.04
        assert loss.item() == pytest.approx(0.085)

    def test_single_cell(self):
        loss = meanteacher_loss(
            np.array([[[0.8]]]), np.array([[[0.6]]]), np.array([[0.2]]), np.array([[0.5]])
        )
        assert loss.item() == pytest.approx(0.13, abs=1e-12)

    def test_teacher_is_constant(self):
        tape = Tape()
        student = tape.watch(np.array([0.2, 0.4]))
        teacher_tape = Tape()
        teacher = teacher_tape.watch(np.array([0.5, 0.5]))
        loss = meanteacher_loss(student, teacher, student.sum(), teacher.sum())
        grad = backward(tape, loss)
        assert not teacher_tape.consumed
        np.testing.assert_allclose(grad, [2 * -0.3 / 2 + 2 * -0.4, 2 * -0.1 / 2 + 2 * -0.4])


class TestConsistency:
    def test_identity_is_zero(self):
        ref = [np.full((4, 2), 0.3), np.full((4, 2), 0.6)]
        weak = [np.array([0.1, 0.2]), np.array([0.5, 0.5])]
        assert _value(consistency_loss(ref, ref, weak, weak)) == 0.0

    def test_mean_over_all_views(self):
        ref = [np.zeros((2, 1)), np.zeros((2, 1))]
        aug = [np.ones((2, 1)), np.zeros((2, 1))]
        weak = [np.zeros(1), np.zeros(1)]
        assert _value(consistency_loss(ref, aug, weak, weak)) == pytest.approx(0.5)

    def test_no_views(self):
        assert consistency_loss([], [], [], []) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="one reference"):
            consistency_loss([np.zeros((2, 1))], [], [np.zeros(1)], [np.zeros(1)])

    def test_reference_keeps_gradient(self):
        tape = Tape()
        flat = tape.watch(np.array([0.2, 0.8]))
        ref, aug = flat[:1], flat[1:]
        loss = consistency_loss([ref.reshape(1, 1)], [aug.reshape(1, 1)], [ref], [aug])
        grad = backward(tape, loss)
        np.testing.assert_allclose(grad, [2 * 2 * -0.6, 2 * 2 * 0.6])


class TestTotal:
    def test_weighting(self):
        parts = LossParts(supervised=1.0, unsupervised=0.5, consistency=0.25)
        weights = LossWeights(lambda_unsuper=2.0, lambda_cr=2.0)
        assert _value(total_loss(weights, parts)) == pytest.approx(2.5)
        assert _value(total_loss(weights, parts, ramp=0.5)) == pytest.approx(1.75)

    def test_method_weights(self):
        assert LossWeights.for_method(Method.SUPERVISED) == LossWeights(0.0, 0.0)
        assert LossWeights.for_method(Method.MT) == LossWeights(2.0, 0.0)
        assert LossWeights.for_method(Method.MT_RDA) == LossWeights(2.0, 0.0)
        assert LossWeights.for_method(Method.CR_RDA) == LossWeights(0.0, 2.0)
        assert LossWeights.for_method(Method.MT_CR_RDA) == LossWeights(2.0, 2.0)

    def test_zero_weight_drops_term(self):
        parts = LossParts(supervised=1.0, unsupervised=float("nan"), consistency=0.5)
        assert _value(total_loss(LossWeights(0.0, 2.0), parts)) == pytest.approx(2.0)

    def test_negative_weight(self):
        with pytest.raises(ValueError, match="non-negative"):
            LossWeights(-1.0, 0.0)


class TestEma:
    def test_converges_geometrically(self, tiny_model_config):
        student = ModelState(params=np.ones(4), config=tiny_model_config)
        teacher = TeacherState(params=np.zeros(4), ema_alpha=0.999)
        for _ in range(1000):
            teacher = ema_update(teacher, student)
        np.testing.assert_allclose(teacher.params, 1.0 - 0.999**1000, rtol=1e-9)

    def test_single_update(self, tiny_model_config):
        student = ModelState(params=np.array([2.0]), config=tiny_model_config)
        teacher = ema_update(TeacherState(params=np.array([1.0]), ema_alpha=0.9), student)
        assert teacher.params[0] == pytest.approx(1.1)
        assert teacher.ema_alpha == 0.9

    def test_alpha_range(self):
        with pytest.raises(ValueError, match="ema_alpha"):
            TeacherState(params=np.zeros(1), ema_alpha=1.0)


class TestSchedules:
    def test_rampup_curve(self):
        assert rampup(0, 50) == pytest.approx(math.exp(-5))
        assert rampup(25, 50) == pytest.approx(math.exp(-1.25))
        assert rampup(50, 50) == 1.0
        assert rampup(80, 50) == 1.0

    def test_rampup_degenerate(self):
        assert rampup(0, 0) == 1.0
        with pytest.raises(ValueError):
            rampup(-1, 10)

    def test_default_schedule(self):
        schedule = Schedule()
        assert learning_rate(schedule, 0) == pytest.approx(1e-3 * math.exp(-5))
        assert learning_rate(schedule, 50) == 1e-3
        assert learning_rate(schedule, 99) == 1e-3
        assert learning_rate(schedule, 100) == 2e-4
        assert learning_rate(schedule, 150) == 4e-5
        assert learning_rate(schedule, 199) == 4e-5

    def test_scaled_schedule(self):
        schedule = Schedule.for_epochs(40)
        assert (schedule.rampup_end, schedule.first_decay_epoch, schedule.second_decay_epoch) == (
            10,
            20,
            30,
        )
        tiny = Schedule.for_epochs(2)
        assert tiny.rampup_end == 1 and tiny.first_decay_epoch == 1

    def test_scaled_schedule_positive(self):
        with pytest.raises(ValueError, match="positive"):
            Schedule.for_epochs(0)


class TestEndToEndGradient:
    """Total loss of one step on a tiny model, differentiated through transport."""

    @pytest.fixture
    def step_inputs(self, tiny_dataset):
        cfg = tiny_dataset.feature_cfg
        clips = [tiny_dataset["train"][0], tiny_dataset["train"][4]]
        config = ModelConfig(
            n_mels=cfg.n_mels,
            n_classes=3,
            conv_blocks=1,
            channels=(2,),
            pool_factor=2,
            recurrent_hidden=3,
        )
        originals = [extract_features(c.waveform, cfg, 2).frames for c in clips]
        rng = np.random.default_rng(11)
        n_frames = tiny_dataset.n_frames
        teacher = (rng.uniform(0.1, 0.9, (2, n_frames, 3)), rng.uniform(0.1, 0.9, (2, 3)))
        return tiny_dataset, clips, config, originals, teacher

    @pytest.mark.parametrize(
        "step",
        [
            PolicyStep(TransformId.DRC, 1, {"mode": 1}),
            PolicyStep(TransformId.TIME_SHIFT, 1, {"fraction": 0.4}),
            PolicyStep(TransformId.SPEED, 3, {"reciprocal": False}),
        ],
        ids=lambda s: s.transform.value,
    )
    def test_matches_finite_differences(self, step_inputs, step):
        dataset, clips, config, originals, teacher = step_inputs
        views = [apply_steps(c, [step], [None], dataset.feature_cfg, 2) for c in clips]
        x = np.stack(originals + [v.features.frames for v in views])
        weights = LossWeights(lambda_unsuper=2.0, lambda_cr=2.0)

        def loss(flat):
            strong, weak = forward_batch(flat, config, x)
            sup = supervised_loss(
                strong[0:1], clips[0].strong.grid[None], weak[1:2], clips[1].weak.vec[None]
            )
            mt = meanteacher_loss(strong[:2], teacher[0], weak[:2], teacher[1])
            refs = [transport_policy(v.steps, strong[i], weak[i]) for i, v in enumerate(views)]
            cr = consistency_loss(
                [r[0] for r in refs],
                [strong[2], strong[3]],
                [r[1] for r in refs],
                [weak[2], weak[3]],
            )
            return total_loss(weights, LossParts(sup, mt, cr), ramp=0.7)

        params = init_state(config, seed=2).params
        tape = Tape()
        grad = backward(tape, loss(tape.watch(params)))

        def value(p):
            return float(loss(Tape(record=False).watch(p)).value)

        eps = 1e-6
        rng = np.random.default_rng(5)
        for i in rng.choice(params.size, size=20, replace=False):
            bump = np.zeros_like(params)
            bump[i] = eps
            numeric = (value(params + bump) - value(params - bump)) / (2 * eps)
            assert grad[i] == pytest.approx(numeric, rel=1e-3, abs=1e-7)
