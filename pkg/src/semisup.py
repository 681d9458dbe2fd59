"""Loss stack, MeanTeacher EMA and schedules for semi-supervised training.

Losses accept tape tensors or plain arrays and return a tensor (or a float
when nothing requires a gradient). Targets are always constants; teacher
predictions are detached on entry.
"""

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from src.autodiff import Tensor, lift, stack
from src.types import LossWeights, ModelState, TeacherState

PRED_CLAMP = 1e-7


@dataclass(frozen=True)
class LossParts:
    """Per-step loss terms before weighting."""

    supervised: Tensor | float
    unsupervised: Tensor | float = 0.0
    consistency: Tensor | float = 0.0

    def values(self) -> tuple[float, float, float]:
        return _scalar(self.supervised), _scalar(self.unsupervised), _scalar(self.consistency)


def _scalar(x: Tensor | float) -> float:
    return x.item() if isinstance(x, Tensor) else float(x)


def _detach(x) -> np.ndarray:
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _check_shapes(pred, target, what: str) -> None:
    if tuple(pred.shape) != tuple(np.shape(target)):
        raise ValueError(
            f"{what}: prediction shape {tuple(pred.shape)} != target shape {np.shape(target)}"
        )


def binary_cross_entropy(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean BCE over every cell, predictions clamped away from 0 and 1."""
    _check_shapes(pred, target, "binary_cross_entropy")
    p = lift(pred).clip(PRED_CLAMP, 1.0 - PRED_CLAMP)
    y = np.asarray(target, dtype=np.float64)
    return -(p.log() * y + (1.0 - p).log() * (1.0 - y)).mean()


def mean_squared_error(pred, target) -> Tensor:
    _check_shapes(pred, target, "mean_squared_error")
    return ((lift(pred) - target) ** 2).mean()


def supervised_loss(
    strong_pred: Tensor | None,
    strong_labels: np.ndarray | None,
    weak_pred: Tensor | None,
    weak_labels: np.ndarray | None,
) -> Tensor | float:
    """BCE over (N_s, T', C) strong cells plus BCE over (N_w, C) weak cells.

    A term whose clip set is empty contributes zero.
    """
    loss: Tensor | float = 0.0
    if strong_pred is not None and strong_pred.shape[0]:
        loss = loss + binary_cross_entropy(strong_pred, strong_labels)
    if weak_pred is not None and weak_pred.shape[0]:
        loss = loss + binary_cross_entropy(weak_pred, weak_labels)
    return loss


def meanteacher_loss(student_strong, teacher_strong, student_weak, teacher_weak) -> Tensor:
    """MSE between student and (constant) teacher predictions on all N clips."""
    return mean_squared_error(student_strong, _detach(teacher_strong)) + mean_squared_error(
        student_weak, _detach(teacher_weak)
    )


def _as_batch(items: Sequence) -> Tensor:
    tensors = [lift(item) for item in items]
    return stack(tensors, axis=0)


def consistency_loss(
    ref_strong: Sequence, aug_strong: Sequence, ref_weak: Sequence, aug_weak: Sequence
) -> Tensor | float:
    """Squared difference between transported references and predictions on augmented views.

    Each sequence holds one entry per (clip, view) pair, so the means are over
    N * P * T' * C strong and N * P * C weak cells. References keep their
    gradient unless they are plain arrays (mixup).
    """
    if not (len(ref_strong) == len(aug_strong) == len(ref_weak) == len(aug_weak)):
        raise ValueError("consistency_loss needs one reference per augmented view")
    if not ref_strong:
        return 0.0
    for ref, aug in zip(ref_strong, aug_strong):
        _check_shapes(aug, ref, "consistency_loss strong")
    for ref, aug in zip(ref_weak, aug_weak):
        _check_shapes(aug, ref, "consistency_loss weak")
    strong_diff = _as_batch(ref_strong) - _as_batch(aug_strong)
    weak_diff = _as_batch(ref_weak) - _as_batch(aug_weak)
    return (strong_diff**2).mean() + (weak_diff**2).mean()


def total_loss(weights: LossWeights, parts: LossParts, ramp: float = 1.0) -> Tensor | float:
    """L_super + ramp * lambda_unsuper * L_unsuper + ramp * lambda_cr * L_cr."""
    loss = parts.supervised
    if weights.lambda_unsuper:
        loss = loss + (ramp * weights.lambda_unsuper) * parts.unsupervised
    if weights.lambda_cr:
        loss = loss + (ramp * weights.lambda_cr) * parts.consistency
    return loss


def ema_update(teacher: TeacherState, student: ModelState) -> TeacherState:
    if teacher.params.shape != student.params.shape:
        raise ValueError(
            f"teacher has {teacher.params.size} parameters, student {student.params.size}"
        )
    alpha = teacher.ema_alpha
    return TeacherState(
        params=alpha * teacher.params + (1.0 - alpha) * student.params, ema_alpha=alpha
    )


def rampup(epoch: float, end_epoch: float) -> float:
    """exp(-5 (1 - min(epoch / end_epoch, 1))^2); 1 when end_epoch is 0."""
    if epoch < 0:
        raise ValueError(f"epoch must be non-negative, got {epoch}")
    if end_epoch <= 0:
        return 1.0
    x = min(epoch / end_epoch, 1.0)
    return math.exp(-5.0 * (1.0 - x) ** 2)


@dataclass(frozen=True)
class Schedule:
    """Learning-rate milestones and the unsupervised-weight ramp end."""

    total_epochs: int = 200
    peak_lr: float = 1e-3
    rampup_end: int = 50
    first_decay_epoch: int = 100
    first_decay_lr: float = 2e-4
    second_decay_epoch: int = 150
    second_decay_lr: float = 4e-5

    @classmethod
    def for_epochs(cls, total: int) -> "Schedule":
        """Default milestones scaled by total / 200."""
        if total < 1:
            raise ValueError(f"total epochs must be positive, got {total}")
        scale = total / 200

        def at(epoch: int) -> int:
            return max(1, int(round(epoch * scale)))

        return cls(
            total_epochs=total,
            rampup_end=at(50),
            first_decay_epoch=at(100),
            second_decay_epoch=at(150),
        )


def learning_rate(schedule: Schedule, epoch: int) -> float:
    if epoch < schedule.rampup_end:
        return schedule.peak_lr * rampup(epoch, schedule.rampup_end)
    if epoch < schedule.first_decay_epoch:
        return schedule.peak_lr
    if epoch < schedule.second_decay_epoch:
        return schedule.first_decay_lr
    return schedule.second_decay_lr
