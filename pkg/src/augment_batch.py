"""Offline augmentation of a dataset split, one recorded policy per clip."""

import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np

from src.augment import AugmentedView, apply_steps, mixup_partner, policy_rng, sample_policy
from src.dataset import SedDataset
from src.evaluation import decode_events
from src.types import (
    LabeledClip,
    MelSpectrogram,
    ScaleScheme,
    StrongLabel,
    SupervisionKind,
    TransformId,
    WeakLabel,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AugmentedClip:
    clip: LabeledClip
    features: MelSpectrogram
    record: dict


def chunk_bounds(n: int, batch_size: int) -> list[tuple[int, int]]:
    """Consecutive [start, stop) chunks; a trailing single clip joins the previous chunk."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be positive, got {batch_size}")
    bounds = [(start, min(start + batch_size, n)) for start in range(0, n, batch_size)]
    if len(bounds) > 1 and bounds[-1][1] - bounds[-1][0] == 1:
        last = bounds.pop()
        bounds[-1] = (bounds[-1][0], last[1])
    return bounds


def _to_clip(clip_id: str, view: AugmentedView, frame_hop_s: float) -> LabeledClip:
    if view.kind == SupervisionKind.STRONG:
        return LabeledClip(
            clip_id=clip_id,
            waveform=view.waveform,
            kind=view.kind,
            strong=StrongLabel(view.strong, frame_hop_s),
            weak=WeakLabel(view.weak),
            events=decode_events(view.strong, frame_hop_s),
        )
    return LabeledClip(
        clip_id=clip_id,
        waveform=view.waveform,
        kind=view.kind,
        weak=WeakLabel(view.weak) if view.kind == SupervisionKind.WEAK else None,
    )


def augment_clips(
    dataset: SedDataset,
    clips: Sequence[LabeledClip],
    seed: int,
    views: int,
    scheme: ScaleScheme,
    enabled: Iterable[TransformId],
    batch_size: int = 8,
    inherit_labels: bool = False,
) -> list[AugmentedClip]:
    """Apply one P-step policy per clip; consecutive chunks are the mixup mini-batches.

    Clip i draws its policy from the (seed, 0, i) generator, so the output does
    not depend on how the work is scheduled.
    """
    enabled = frozenset(enabled)
    out: list[AugmentedClip] = []
    for start, stop in chunk_bounds(len(clips), batch_size):
        chunk = list(clips[start:stop])
        for position, clip in enumerate(chunk):
            index = start + position
            policy = sample_policy(policy_rng(seed, 0, index), views, scheme, enabled)
            partners: list[LabeledClip | None] = []
            for step in policy.steps:
                if step.transform == TransformId.MIXUP:
                    partners.append(chunk[mixup_partner(step, position, len(chunk))])
                else:
                    partners.append(None)
            view = apply_steps(
                clip,
                policy.steps,
                partners,
                dataset.feature_cfg,
                dataset.pool_factor,
                inherit_labels,
            )
            clip_id = f"{clip.clip_id}-aug"
            record = {
                "id": clip_id,
                "source": clip.clip_id,
                "kind": view.kind.value,
                "partners": [p.clip_id if p is not None else None for p in partners],
                **policy.to_record(),
            }
            out.append(
                AugmentedClip(
                    _to_clip(clip_id, view, dataset.frame_hop_s),
                    view.features,
                    record,
                )
            )
    logger.info("Augmented %d clips with P=%d", len(out), views)
    return out


def augmented_dataset(
    dataset: SedDataset, split: str, augmented: list[AugmentedClip]
) -> SedDataset:
    return SedDataset(
        splits={split: [a.clip for a in augmented]},
        feature_cfg=dataset.feature_cfg,
        n_classes=dataset.n_classes,
        pool_factor=dataset.pool_factor,
        meta={**dataset.meta, "augmented_from": split},
    )


def feature_archive(augmented: list[AugmentedClip]) -> dict[str, np.ndarray]:
    """Model-ready frames keyed by clip id; masks only exist at this level."""
    return {a.clip.clip_id: a.features.frames for a in augmented}
