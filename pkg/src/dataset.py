"""Synthetic desk corpus, supervision splits and mini-batch composition."""

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from scipy import signal

from src.dsp import FeatureConfig
from src.types import (
    Batch,
    EventList,
    LabeledClip,
    StrongLabel,
    SupervisionKind,
    Waveform,
)

logger = logging.getLogger(__name__)

MAX_CLASSES = 10
BACKGROUND_DBFS = -30.0
EVENT_DBFS_RANGE = (-20.0, -8.0)
EVENT_DURATION_RANGE = (0.5, 3.0)
EVENTS_PER_CLIP = (1, 3)
FADE_S = 0.01

SPLITS = ("train", "validation", "test")
KIND_ORDER = (SupervisionKind.STRONG, SupervisionKind.WEAK, SupervisionKind.UNLABELED)


@dataclass(frozen=True)
class CorpusConfig:
    """Size and shape of a generated corpus."""

    n_classes: int = 4
    n_train_strong: int = 200
    n_train_weak: int = 200
    n_train_unlabeled: int = 600
    n_validation: int = 100
    n_test: int = 200
    pool_factor: int = 4

    def __post_init__(self) -> None:
        if not 1 <= self.n_classes <= MAX_CLASSES:
            raise ValueError(f"n_classes must be in [1, {MAX_CLASSES}], got {self.n_classes}")
        sizes = (
            self.n_train_strong,
            self.n_train_weak,
            self.n_train_unlabeled,
            self.n_validation,
            self.n_test,
        )
        if min(sizes) < 0:
            raise ValueError("split sizes must be non-negative")

    def to_dict(self) -> dict:
        return {
            "n_classes": self.n_classes,
            "n_train_strong": self.n_train_strong,
            "n_train_weak": self.n_train_weak,
            "n_train_unlabeled": self.n_train_unlabeled,
            "n_validation": self.n_validation,
            "n_test": self.n_test,
            "pool_factor": self.pool_factor,
        }


@dataclass(frozen=True)
class SedDataset:
    """Named splits of labeled clips sharing one feature configuration."""

    splits: dict[str, list[LabeledClip]]
    feature_cfg: FeatureConfig
    n_classes: int
    pool_factor: int = 4
    meta: dict = field(default_factory=dict)

    def __getitem__(self, split: str) -> list[LabeledClip]:
        try:
            return self.splits[split]
        except KeyError:
            raise KeyError(f"dataset has no split '{split}' (have {sorted(self.splits)})") from None

    @property
    def n_frames(self) -> int:
        """Output frames T' of every strong grid."""
        return self.feature_cfg.output_frames(self.pool_factor)

    @property
    def frame_hop_s(self) -> float:
        return self.feature_cfg.output_hop_s(self.pool_factor)

    def pools(self, split: str = "train") -> dict[SupervisionKind, list[LabeledClip]]:
        clips = self[split]
        return {kind: [clip for clip in clips if clip.kind == kind] for kind in KIND_ORDER}


# label rasterisation -------------------------------------------------------------


def rasterize(events: EventList, n_frames: int, frame_hop_s: float) -> np.ndarray:
    """(T', C) grid where frame t of class c is 1 iff its centre lies in an event of c."""
    grid = np.zeros((n_frames, events.n_classes), dtype=np.uint8)
    centres = (np.arange(n_frames) + 0.5) * frame_hop_s
    for c in range(events.n_classes):
        for onset, offset in events[c]:
            grid[(centres >= onset) & (centres < offset), c] = 1
    return grid


def strong_clip(
    clip_id: str, waveform: Waveform, events: EventList, n_frames: int, frame_hop_s: float
) -> LabeledClip:
    strong = StrongLabel(rasterize(events, n_frames, frame_hop_s), frame_hop_s)
    return LabeledClip(
        clip_id=clip_id,
        waveform=waveform,
        kind=SupervisionKind.STRONG,
        strong=strong,
        weak=strong.to_weak(),
        events=events,
    )


def weaken(clip: LabeledClip) -> LabeledClip:
    """Drop the frame grid; keep the clip-level OR and the evaluation-only events."""
    if clip.kind != SupervisionKind.STRONG:
        raise ValueError(f"weaken needs a strong clip, {clip.clip_id} is {clip.kind.value}")
    return replace(clip, kind=SupervisionKind.WEAK, strong=None)


def strip(clip: LabeledClip) -> LabeledClip:
    """Drop all training labels; ground-truth events stay for evaluation."""
    if clip.kind != SupervisionKind.STRONG:
        raise ValueError(f"strip needs a strong clip, {clip.clip_id} is {clip.kind.value}")
    return replace(clip, kind=SupervisionKind.UNLABELED, strong=None, weak=None)


# synthesis ---------------------------------------------------------------------


def _dbfs_to_rms(db: float) -> float:
    return 10.0 ** (db / 20.0)


def _normalize(x: np.ndarray, rms: float) -> np.ndarray:
    current = np.sqrt(np.mean(x**2))
    return x if current == 0 else x * (rms / current)


def pink_noise(rng: np.random.Generator, n: int) -> np.ndarray:
    """1/f power noise shaped in the frequency domain."""
    spectrum = np.fft.rfft(rng.standard_normal(n))
    freqs = np.arange(len(spectrum), dtype=np.float64)
    freqs[0] = 1.0
    return np.fft.irfft(spectrum / np.sqrt(freqs), n)


def class_primitive(c: int, n: int, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-RMS source signal of class c.

    Class 0 is a 440 Hz tone and odd classes are upward chirps from 200 + 300c Hz
    over one octave. The remaining even classes are 4th-order Butterworth noise
    bands spanning 0.7 to 1.3 times 500 * (c + 1) Hz.
    """
    t = np.arange(n) / sample_rate
    if c == 0:
        x = np.sin(2 * np.pi * 440.0 * t)
    elif c % 2 == 1:
        f0 = 200.0 + 300.0 * c
        x = signal.chirp(t, f0=f0, t1=max(t[-1], 1e-3), f1=2 * f0, method="linear")
    else:
        centre = 500.0 * (c + 1)
        band = [0.7 * centre, 1.3 * centre]
        sos = signal.butter(4, band, btype="bandpass", fs=sample_rate, output="sos")
        x = signal.sosfilt(sos, rng.standard_normal(n))
    return _normalize(x, 1.0)


def _fade(n: int, sample_rate: int) -> np.ndarray:
    ramp = min(int(FADE_S * sample_rate), n // 2)
    env = np.ones(n)
    if ramp:
        rise = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        env[:ramp] = rise
        env[n - ramp :] = rise[::-1]
    return env


def synth_clip(
    rng: np.random.Generator,
    n_classes: int,
    clip_seconds: float,
    feature_cfg: FeatureConfig | None = None,
    pool_factor: int = 4,
    clip_id: str = "clip",
) -> LabeledClip:
    """Pink background plus 1-3 class events with exact ground truth.

    Onsets and durations are drawn on a millisecond grid so the stored
    intervals survive a text round trip.
    """
    if not 1 <= n_classes <= MAX_CLASSES:
        raise ValueError(f"n_classes must be in [1, {MAX_CLASSES}], got {n_classes}")
    cfg = replace(feature_cfg or FeatureConfig(), clip_seconds=clip_seconds)
    sr = cfg.sample_rate
    n = cfg.clip_samples

    samples = _normalize(pink_noise(rng, n), _dbfs_to_rms(BACKGROUND_DBFS))
    events: dict[int, list[tuple[float, float]]] = {}
    low, high = EVENT_DURATION_RANGE
    high = min(high, clip_seconds)
    low = min(low, high)
    for _ in range(int(rng.integers(EVENTS_PER_CLIP[0], EVENTS_PER_CLIP[1] + 1))):
        c = int(rng.integers(n_classes))
        duration = round(float(rng.uniform(low, high)), 3)
        onset = round(float(rng.uniform(0.0, clip_seconds - duration)), 3)
        offset = min(round(onset + duration, 3), clip_seconds)
        start, stop = int(round(onset * sr)), int(round(offset * sr))
        level = _dbfs_to_rms(float(rng.uniform(*EVENT_DBFS_RANGE)))
        source = class_primitive(c, stop - start, sr, rng)
        samples[start:stop] += level * source * _fade(stop - start, sr)
        events.setdefault(c, []).append((onset, offset))

    event_list = EventList(n_classes, events).sorted()
    return strong_clip(
        clip_id,
        Waveform(samples, sr),
        event_list,
        cfg.output_frames(pool_factor),
        cfg.output_hop_s(pool_factor),
    )


def clip_rng(seed: int, split: str, index: int) -> np.random.Generator:
    """Generator keyed by (seed, split, clip index), independent of generation order."""
    return np.random.default_rng([seed, SPLITS.index(split) if split in SPLITS else 99, index])


def generate_corpus(
    corpus_cfg: CorpusConfig, feature_cfg: FeatureConfig, seed: int
) -> SedDataset:
    """Generate train (strong / weak / unlabeled), validation and test splits."""
    logger.info(
        "Generating corpus seed=%d classes=%d clip=%.1fs",
        seed,
        corpus_cfg.n_classes,
        feature_cfg.clip_seconds,
    )

    def make(split: str, index: int, name: str) -> LabeledClip:
        return synth_clip(
            clip_rng(seed, split, index),
            corpus_cfg.n_classes,
            feature_cfg.clip_seconds,
            feature_cfg,
            corpus_cfg.pool_factor,
            clip_id=f"{split}-{name}-{index:04d}",
        )

    train: list[LabeledClip] = []
    index = 0
    for count, kind, convert in (
        (corpus_cfg.n_train_strong, SupervisionKind.STRONG, None),
        (corpus_cfg.n_train_weak, SupervisionKind.WEAK, weaken),
        (corpus_cfg.n_train_unlabeled, SupervisionKind.UNLABELED, strip),
    ):
        for _ in range(count):
            clip = make("train", index, kind.value)
            train.append(convert(clip) if convert else clip)
            index += 1

    splits = {
        "train": train,
        "validation": [make("validation", i, "strong") for i in range(corpus_cfg.n_validation)],
        "test": [make("test", i, "strong") for i in range(corpus_cfg.n_test)],
    }
    return SedDataset(
        splits=splits,
        feature_cfg=feature_cfg,
        n_classes=corpus_cfg.n_classes,
        pool_factor=corpus_cfg.pool_factor,
        meta={"seed": seed, "corpus": corpus_cfg.to_dict()},
    )


# batches -----------------------------------------------------------------------


class BatchComposer:
    """Draws mini-batches without replacement per epoch from the three supervision pools.

    A pool that runs out mid-epoch is reshuffled and restarted; the wrap is logged.
    """

    def __init__(
        self,
        pools: dict[SupervisionKind, list[LabeledClip]],
        composition: tuple[int, int, int],
        rng: np.random.Generator,
    ) -> None:
        if len(composition) != 3 or min(composition) < 0 or sum(composition) == 0:
            raise ValueError(f"invalid batch composition {composition}")
        for kind, quota in zip(KIND_ORDER, composition):
            available = len(pools.get(kind, []))
            if available < quota:
                raise ValueError(
                    f"{kind.value} pool has {available} clips, fewer than its quota {quota}"
                )
        self.pools = {kind: list(pools.get(kind, [])) for kind in KIND_ORDER}
        self.composition = tuple(composition)
        self.rng = rng
        self.wraps = 0
        self._order: dict[SupervisionKind, np.ndarray] = {}
        self._cursor: dict[SupervisionKind, int] = {}
        self.new_epoch()

    @property
    def steps_per_epoch(self) -> int:
        """Batches until the first active pool is exhausted."""
        return max(
            1,
            min(
                len(self.pools[kind]) // quota
                for kind, quota in zip(KIND_ORDER, self.composition)
                if quota
            ),
        )

    def new_epoch(self) -> None:
        for kind in KIND_ORDER:
            self._order[kind] = self.rng.permutation(len(self.pools[kind]))
            self._cursor[kind] = 0

    def _take(self, kind: SupervisionKind, quota: int) -> list[LabeledClip]:
        if self._cursor[kind] + quota > len(self._order[kind]):
            self.wraps += 1
            logger.info("%s pool exhausted mid-epoch; reshuffling", kind.value)
            self._order[kind] = self.rng.permutation(len(self.pools[kind]))
            self._cursor[kind] = 0
        start = self._cursor[kind]
        self._cursor[kind] = start + quota
        return [self.pools[kind][i] for i in self._order[kind][start : start + quota]]

    def make_batch(self) -> Batch:
        clips: list[LabeledClip] = []
        for kind, quota in zip(KIND_ORDER, self.composition):
            clips.extend(self._take(kind, quota))
        return Batch(clips=clips, composition=self.composition)


def make_batch(
    pools: dict[SupervisionKind, list[LabeledClip]],
    composition: tuple[int, int, int],
    rng: np.random.Generator,
) -> Batch:
    """One batch drawn without replacement from freshly shuffled pools."""
    return BatchComposer(pools, composition, rng).make_batch()


def dataset_summary(dataset: SedDataset) -> pd.DataFrame:
    """Clip and event counts per split and supervision kind, with per-class event columns."""
    rows = []
    for split, clips in dataset.splits.items():
        for kind in KIND_ORDER:
            members = [clip for clip in clips if clip.kind == kind]
            if not members:
                continue
            row = {"split": split, "kind": kind.value, "clips": len(members)}
            per_class = np.zeros(dataset.n_classes, dtype=int)
            for clip in members:
                if clip.events is not None:
                    for c in range(dataset.n_classes):
                        per_class[c] += len(clip.events[c])
            row["events"] = int(per_class.sum())
            row.update({f"class_{c}": int(n) for c, n in enumerate(per_class)})
            rows.append(row)
    return pd.DataFrame(rows)
