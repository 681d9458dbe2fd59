"""Semi-supervised training loop: batches, augmented views, losses, Adam and EMA."""

import json
import logging
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from src.augment import (
    AugmentedView,
    apply_steps,
    mixup_partner,
    policy_rng,
    sample_policy,
    transport_policy,
)
from src.autodiff import Tape, backward
from src.checkpoint import save_student, save_teacher
from src.dataset import BatchComposer, SedDataset
from src.dsp import extract_features
from src.errors import DataError, NumericalError
from src.evaluation import MEDIAN_FILTER_S, evaluate_model
from src.model import adam_step, fit_scaler, forward_batch, init_state
from src.semisup import (
    LossParts,
    Schedule,
    consistency_loss,
    ema_update,
    learning_rate,
    meanteacher_loss,
    rampup,
    supervised_loss,
    total_loss,
)
from src.types import (
    Activation,
    LabeledClip,
    LossWeights,
    MelSpectrogram,
    Method,
    ModelConfig,
    ModelState,
    PoolingHead,
    ScaleScheme,
    SupervisionKind,
    TeacherState,
    TransformId,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """Everything `train` needs besides the dataset and the seed."""

    method: Method = Method.MT_CR_RDA
    activation: Activation = Activation.GLU
    pooling_head: PoolingHead = PoolingHead.ATTENTION
    conv_blocks: int = 2
    channels: tuple[int, ...] = (8, 16)
    recurrent_hidden: int = 32
    epochs: int = 40
    composition: tuple[int, int, int] = (2, 2, 4)
    steps_per_epoch: int | None = None
    views: int = 1
    scale: ScaleScheme = field(default_factory=ScaleScheme)
    transforms: frozenset[TransformId] = frozenset(TransformId)
    ema_alpha: float = 0.999
    median_filter_s: float = MEDIAN_FILTER_S
    checkpoint_every: int = 0
    inherit_labels: bool = False
    workers: int = 1

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"epochs must be positive, got {self.epochs}")
        if self.views < 1:
            raise ValueError(f"views must be positive, got {self.views}")
        if self.method.uses_augmentation and not self.transforms:
            raise ValueError(f"method {self.method.value} needs at least one enabled transform")

    def model_config(self, dataset: SedDataset) -> ModelConfig:
        return ModelConfig(
            n_mels=dataset.feature_cfg.n_mels,
            n_classes=dataset.n_classes,
            conv_blocks=self.conv_blocks,
            channels=self.channels,
            pool_factor=dataset.pool_factor,
            activation=self.activation,
            recurrent_hidden=self.recurrent_hidden,
            pooling_head=self.pooling_head,
        )


@dataclass
class TrainResult:
    student: ModelState
    teacher: TeacherState | None
    log: list[dict]


@dataclass(frozen=True)
class _ViewJob:
    position: int
    view_index: int
    partner: int | None
    view: AugmentedView


class Trainer:
    """Owns the mutable optimisation state of one training run."""

    def __init__(
        self,
        dataset: SedDataset,
        config: TrainConfig,
        seed: int,
        log_path: Path | None = None,
        checkpoint_dir: Path | None = None,
        header: dict | None = None,
    ) -> None:
        try:
            pools = dataset.pools("train")
        except KeyError as e:
            raise DataError(str(e.args[0])) from e
        if any(quota and not pools[kind] for kind, quota in zip(pools, config.composition)):
            raise DataError("the train split lacks a pool required by the batch composition")

        self.dataset = dataset
        self.config = config
        self.seed = seed
        self.log_path = log_path
        self.checkpoint_dir = checkpoint_dir
        self.header = header or {}
        self.weights = LossWeights.for_method(config.method)
        self.schedule = Schedule.for_epochs(config.epochs)
        self.composer = BatchComposer(pools, config.composition, np.random.default_rng([seed, 1]))
        self.steps_per_epoch = config.steps_per_epoch or self.composer.steps_per_epoch

        model_config = config.model_config(dataset)
        self._features: dict[str, MelSpectrogram] = {}
        scaler = fit_scaler(self.features(clip) for clip in dataset["train"])
        self.student = init_state(model_config, seed, scaler)
        self.teacher: TeacherState | None = None
        if config.method.uses_teacher:
            self.teacher = TeacherState(self.student.params.copy(), config.ema_alpha)
        self.validation = dataset.splits.get("validation", [])

    def features(self, clip: LabeledClip) -> MelSpectrogram:
        cached = self._features.get(clip.clip_id)
        if cached is None:
            cfg, pool = self.dataset.feature_cfg, self.dataset.pool_factor
            cached = extract_features(clip.waveform, cfg, pool)
            self._features[clip.clip_id] = cached
        return cached

    # augmentation --------------------------------------------------------------

    def _views_for_clip(
        self, clips: list[LabeledClip], position: int, epoch: int, clip_index: int
    ) -> list[_ViewJob]:
        rng = policy_rng(self.seed, epoch, clip_index)
        policy = sample_policy(rng, self.config.views, self.config.scale, self.config.transforms)
        jobs = []
        for p, step in enumerate(policy.steps):
            partner = None
            if step.transform == TransformId.MIXUP:
                partner = mixup_partner(step, position, len(clips))
            view = apply_steps(
                clips[position],
                [step],
                [clips[partner] if partner is not None else None],
                self.dataset.feature_cfg,
                self.dataset.pool_factor,
                self.config.inherit_labels,
            )
            jobs.append(_ViewJob(position, p, partner, view))
        return jobs

    def _augment(self, clips: list[LabeledClip], epoch: int, step: int) -> list[_ViewJob]:
        n = len(clips)
        args = [(position, step * n + position) for position in range(n)]

        def run(arg: tuple[int, int]) -> list[_ViewJob]:
            return self._views_for_clip(clips, arg[0], epoch, arg[1])

        if self.config.workers > 1:
            with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
                per_clip = list(pool.map(run, args))
        else:
            per_clip = [run(arg) for arg in args]
        return [job for jobs in per_clip for job in jobs]

    # one step ------------------------------------------------------------------

    def _step(self, epoch: int, step: int, lr: float, ramp: float) -> LossParts:
        clips = self.composer.make_batch().clips
        n = len(clips)
        views = self._augment(clips, epoch, step) if self.config.method.uses_augmentation else []

        frames = [self.features(clip).frames for clip in clips]
        frames += [job.view.features.frames for job in views]
        tape = Tape()
        flat = tape.watch(self.student.params)
        config, scaler = self.student.config, self.student.scaler
        strong, weak = forward_batch(flat, config, np.stack(frames), scaler)

        # supervised terms cover originals and labelled views
        kinds = [clip.kind for clip in clips] + [job.view.kind for job in views]
        labelled = [
            (c.kind, c.strong.grid if c.strong is not None else None,
             c.weak.vec if c.weak is not None else None)
            for c in clips
        ]
        labelled += [(job.view.kind, job.view.strong, job.view.weak) for job in views]
        strong_labels = [s for k, s, _ in labelled if k == SupervisionKind.STRONG]
        weak_labels = [w for k, _, w in labelled if k == SupervisionKind.WEAK]
        strong_idx = np.array([i for i, k in enumerate(kinds) if k == SupervisionKind.STRONG])
        weak_idx = np.array([i for i, k in enumerate(kinds) if k == SupervisionKind.WEAK])
        loss_super = supervised_loss(
            strong[strong_idx] if strong_idx.size else None,
            np.stack(strong_labels) if strong_labels else None,
            weak[weak_idx] if weak_idx.size else None,
            np.stack(weak_labels) if weak_labels else None,
        )

        loss_unsuper = 0.0
        if self.teacher is not None:
            teacher_flat = Tape(record=False).watch(self.teacher.params)
            t_strong, t_weak = forward_batch(teacher_flat, config, np.stack(frames[:n]), scaler)
            loss_unsuper = meanteacher_loss(strong[:n], t_strong.value, weak[:n], t_weak.value)

        loss_cr = 0.0
        if views and self.weights.lambda_cr:
            refs_strong, refs_weak, augs_strong, augs_weak = [], [], [], []
            for offset, job in enumerate(views):
                pos, partner = job.position, job.partner
                ref_strong, ref_weak = transport_policy(
                    job.view.steps,
                    strong[pos],
                    weak[pos],
                    [strong.value[partner] if partner is not None else None],
                    [weak.value[partner] if partner is not None else None],
                    self.config.inherit_labels,
                )
                refs_strong.append(ref_strong)
                refs_weak.append(ref_weak)
                augs_strong.append(strong[n + offset])
                augs_weak.append(weak[n + offset])
            loss_cr = consistency_loss(refs_strong, augs_strong, refs_weak, augs_weak)

        parts = LossParts(loss_super, loss_unsuper, loss_cr)
        loss = total_loss(self.weights, parts, ramp)
        values = parts.values()
        if not np.all(np.isfinite(values)):
            raise NumericalError(
                f"non-finite loss at epoch {epoch} step {step}: "
                f"super={values[0]} unsuper={values[1]} cr={values[2]}"
            )

        if isinstance(loss, float):
            grad = np.zeros_like(self.student.params)
        else:
            grad = backward(tape, loss)
        try:
            self.student = adam_step(self.student, grad, lr)
        except NumericalError as e:
            raise NumericalError(f"epoch {epoch} step {step}: {e}") from e
        if self.teacher is not None:
            self.teacher = ema_update(self.teacher, self.student)
        return parts

    # epochs --------------------------------------------------------------------

    def run(self, on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
        log: list[dict] = []
        if self.log_path is not None:
            self.log_path.parent.mkdir(parents=True, exist_ok=True)
            self.log_path.write_text("")

        for epoch in range(self.config.epochs):
            self.composer.new_epoch()
            lr = learning_rate(self.schedule, epoch)
            ramp = rampup(epoch, self.schedule.rampup_end)
            totals = np.zeros(3)
            for step in range(self.steps_per_epoch):
                totals += self._step(epoch, step, lr, ramp).values()
            means = totals / self.steps_per_epoch

            val_f1 = None
            if self.validation:
                val_f1 = evaluate_model(
                    self.student,
                    self.validation,
                    self.dataset.feature_cfg,
                    self.config.median_filter_s,
                    features=[self.features(clip) for clip in self.validation],
                ).macro_f1

            record = {
                "epoch": epoch,
                "lr": lr,
                "ramp": ramp,
                "loss_super": float(means[0]),
                "loss_unsuper": float(means[1]),
                "loss_cr": float(means[2]),
                "val_collar_f1": val_f1,
            }
            log.append(record)
            logger.info(
                "epoch %d lr=%.2e ramp=%.3f super=%.4f unsuper=%.4f cr=%.4f val_f1=%s",
                epoch,
                lr,
                ramp,
                *means,
                "n/a" if val_f1 is None else f"{val_f1:.4f}",
            )
            if self.log_path is not None:
                with self.log_path.open("a") as f:
                    f.write(json.dumps(record, sort_keys=True) + "\n")
            if on_epoch is not None:
                on_epoch(record)

            every = self.config.checkpoint_every
            if self.checkpoint_dir is not None and every and (epoch + 1) % every == 0:
                self.save(self.checkpoint_dir, suffix=f"_epoch{epoch + 1:03d}", epoch=epoch + 1)

        if self.checkpoint_dir is not None:
            self.save(self.checkpoint_dir, epoch=self.config.epochs)
        return TrainResult(student=self.student, teacher=self.teacher, log=log)

    def save(self, directory: Path, suffix: str = "", epoch: int | None = None) -> None:
        extra = {"epoch": epoch, "seed": self.seed, "method": self.config.method.value}
        extra.update(self.header)
        save_student(directory / f"student{suffix}.sedm", self.student, extra)
        if self.teacher is not None:
            save_teacher(directory / f"teacher{suffix}.sedm", self.teacher, self.student, extra)


def train(
    dataset: SedDataset,
    config: TrainConfig,
    seed: int,
    log_path: Path | None = None,
    checkpoint_dir: Path | None = None,
    header: dict | None = None,
) -> TrainResult:
    """Train a student (and, for MeanTeacher methods, its EMA teacher) deterministically."""
    logger.info(
        "Training %s seed=%d epochs=%d composition=%s",
        config.method.value,
        seed,
        config.epochs,
        config.composition,
    )
    return Trainer(dataset, config, seed, log_path, checkpoint_dir, header).run()
