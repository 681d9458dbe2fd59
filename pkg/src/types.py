"""Type definitions for the sound event detection toolkit."""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class TransformId(Enum):
    """The eight random-augmentation transforms."""

    SPEED = "speed"
    TIME_SHIFT = "time_shift"
    TIME_STRETCH = "time_stretch"
    PITCH_SHIFT = "pitch_shift"
    DRC = "drc"
    TIME_MASK = "time_mask"
    FREQ_MASK = "freq_mask"
    MIXUP = "mixup"


WAVEFORM_TRANSFORMS = frozenset(
    {
        TransformId.SPEED,
        TransformId.TIME_SHIFT,
        TransformId.TIME_STRETCH,
        TransformId.PITCH_SHIFT,
        TransformId.DRC,
        TransformId.MIXUP,
    }
)
FEATURE_TRANSFORMS = frozenset({TransformId.TIME_MASK, TransformId.FREQ_MASK})


class ScaleMode(Enum):
    """How the per-clip distortion scale is derived from the global scale."""

    FIXED = "fixed"
    RANDOM = "random"


class SupervisionKind(Enum):
    """Supervision available for a clip, strongest first."""

    STRONG = "strong"
    WEAK = "weak"
    UNLABELED = "unlabeled"

    @property
    def rank(self) -> int:
        return {"strong": 2, "weak": 1, "unlabeled": 0}[self.value]

    def weaker(self, other: "SupervisionKind") -> "SupervisionKind":
        return self if self.rank <= other.rank else other


class Activation(Enum):
    """Gated activation used after each convolution."""

    GLU = "glu"
    CG = "cg"


class PoolingHead(Enum):
    """How frame predictions are pooled into the clip-level prediction."""

    ATTENTION = "attention"
    MEAN = "mean"


class Method(Enum):
    """Training recipes of the experiment grid."""

    SUPERVISED = "supervised"
    MT = "mt"
    MT_RDA = "mt_rda"
    CR_RDA = "cr_rda"
    MT_CR_RDA = "mt_cr_rda"

    @property
    def uses_augmentation(self) -> bool:
        return self in (Method.MT_RDA, Method.CR_RDA, Method.MT_CR_RDA)

    @property
    def uses_teacher(self) -> bool:
        return self in (Method.MT, Method.MT_RDA, Method.MT_CR_RDA)


@dataclass(frozen=True)
class Waveform:
    """Mono sample buffer. Samples are float64, sample_rate in Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.samples.ndim != 1:
            raise ValueError(f"expected mono samples, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return int(self.samples.shape[0])

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class ComplexSpectrogram:
    """Short-time Fourier transform, frames along axis 0."""

    frames: np.ndarray  # (T_f, window_size // 2 + 1) complex
    window_size: int
    hop: int

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])


@dataclass(frozen=True)
class MelSpectrogram:
    """Log-mel feature matrix, frames along axis 0."""

    frames: np.ndarray  # (T, K)
    frame_hop_s: float

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])

    @property
    def n_mels(self) -> int:
        return int(self.frames.shape[1])


@dataclass(frozen=True)
class StrongLabel:
    """Frame-level binary activity, shape (T', C)."""

    grid: np.ndarray
    frame_hop_s: float

    def __post_init__(self) -> None:
        if self.grid.ndim != 2 or not np.isin(self.grid, (0, 1)).all():
            raise ValueError("strong label grid must be a binary (T', C) matrix")

    def to_weak(self) -> "WeakLabel":
        return WeakLabel(self.grid.any(axis=0).astype(np.uint8))


@dataclass(frozen=True)
class WeakLabel:
    """Clip-level binary activity, shape (C,)."""

    vec: np.ndarray

    def __post_init__(self) -> None:
        if self.vec.ndim != 1 or not np.isin(self.vec, (0, 1)).all():
            raise ValueError("weak label must be a binary (C,) vector")


@dataclass
class EventList:
    """Per-class (onset_s, offset_s) intervals."""

    n_classes: int
    events: dict[int, list[tuple[float, float]]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for c, intervals in self.events.items():
            if not 0 <= c < self.n_classes:
                raise ValueError(f"class index {c} outside [0, {self.n_classes})")
            for onset, offset in intervals:
                if not onset < offset:
                    raise ValueError(f"event ({onset}, {offset}) has onset >= offset")
        self.events = {
            c: [(float(on), float(off)) for on, off in self.events.get(c, [])]
            for c in range(self.n_classes)
        }

    def __getitem__(self, c: int) -> list[tuple[float, float]]:
        return self.events[c]

    def is_sorted(self) -> bool:
        return all(ev == sorted(ev) for ev in self.events.values())

    def sorted(self) -> "EventList":
        return EventList(self.n_classes, {c: sorted(ev) for c, ev in self.events.items()})

    def shifted(self, delta_s: float) -> "EventList":
        return EventList(
            self.n_classes,
            {c: [(on + delta_s, off + delta_s) for on, off in ev] for c, ev in self.events.items()},
        )

    def union(self, other: "EventList") -> "EventList":
        if other.n_classes != self.n_classes:
            raise ValueError("cannot merge event lists with different class counts")
        return EventList(
            self.n_classes,
            {c: sorted(self.events[c] + other.events[c]) for c in range(self.n_classes)},
        )

    def count(self) -> int:
        return sum(len(ev) for ev in self.events.values())


@dataclass(frozen=True)
class LabeledClip:
    """A training or evaluation clip with whatever supervision it carries.

    Ground-truth `events` may be present on weak and unlabeled clips; they are
    used for evaluation only and never reach the losses.
    """

    clip_id: str
    waveform: Waveform
    kind: SupervisionKind
    strong: StrongLabel | None = None
    weak: WeakLabel | None = None
    events: EventList | None = None

    def __post_init__(self) -> None:
        if self.kind == SupervisionKind.STRONG:
            if self.strong is None or self.weak is None or self.events is None:
                raise ValueError(f"strong clip {self.clip_id} needs strong, weak and events")
            if not np.array_equal(self.strong.to_weak().vec, self.weak.vec):
                raise ValueError(f"weak label of {self.clip_id} is not the OR of its strong grid")
        elif self.kind == SupervisionKind.WEAK:
            if self.weak is None or self.strong is not None:
                raise ValueError(f"weak clip {self.clip_id} needs a weak label and no strong one")
        elif self.strong is not None or self.weak is not None:
            raise ValueError(f"unlabeled clip {self.clip_id} must not carry labels")


@dataclass(frozen=True)
class Batch:
    """Clips ordered strong, weak, unlabeled."""

    clips: list[LabeledClip]
    composition: tuple[int, int, int]

    def __post_init__(self) -> None:
        counts = tuple(
            sum(1 for clip in self.clips if clip.kind == kind)
            for kind in (SupervisionKind.STRONG, SupervisionKind.WEAK, SupervisionKind.UNLABELED)
        )
        if counts != tuple(self.composition):
            raise ValueError(f"batch counts {counts} do not match composition {self.composition}")


@dataclass(frozen=True)
class ScaleScheme:
    """Global distortion scale and how it is applied per clip."""

    mode: ScaleMode = ScaleMode.RANDOM
    global_scale: int = 5

    def __post_init__(self) -> None:
        if not 1 <= self.global_scale <= 10:
            raise ValueError(f"global_scale must be in [1, 10], got {self.global_scale}")


@dataclass(frozen=True)
class PolicyStep:
    """One transform with its scale and every random outcome needed to replay it."""

    transform: TransformId
    scale: int
    draws: dict[str, float | int | bool | list[float]] = field(default_factory=dict)

    def to_record(self) -> dict:
        return {"transform": self.transform.value, "scale": self.scale, "draws": dict(self.draws)}


@dataclass(frozen=True)
class AugmentPolicy:
    """Ordered transforms applied to one clip in one epoch."""

    steps: tuple[PolicyStep, ...]
    seed: int

    def to_record(self) -> dict:
        return {"seed": self.seed, "steps": [step.to_record() for step in self.steps]}


@dataclass(frozen=True)
class ModelConfig:
    """Architecture of the reduced gated CRNN."""

    n_mels: int
    n_classes: int
    conv_blocks: int = 2
    channels: tuple[int, ...] = (8, 16)
    pool_factor: int = 4
    activation: Activation = Activation.GLU
    recurrent_hidden: int = 32
    pooling_head: PoolingHead = PoolingHead.ATTENTION

    def __post_init__(self) -> None:
        if len(self.channels) != self.conv_blocks:
            raise ValueError(
                f"channels {self.channels} must list one width per conv block ({self.conv_blocks})"
            )
        if self.pool_factor < 1 or self.pool_factor & (self.pool_factor - 1):
            raise ValueError(f"pool_factor must be a power of two, got {self.pool_factor}")
        if self.pool_factor > 2**self.conv_blocks:
            raise ValueError("pool_factor cannot exceed 2 ** conv_blocks")
        if self.n_mels % (2**self.conv_blocks):
            raise ValueError(f"n_mels={self.n_mels} must be divisible by 2 ** conv_blocks")

    def to_dict(self) -> dict:
        return {
            "n_mels": self.n_mels,
            "n_classes": self.n_classes,
            "conv_blocks": self.conv_blocks,
            "channels": list(self.channels),
            "pool_factor": self.pool_factor,
            "activation": self.activation.value,
            "recurrent_hidden": self.recurrent_hidden,
            "pooling_head": self.pooling_head.value,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(
            n_mels=int(data["n_mels"]),
            n_classes=int(data["n_classes"]),
            conv_blocks=int(data["conv_blocks"]),
            channels=tuple(int(c) for c in data["channels"]),
            pool_factor=int(data["pool_factor"]),
            activation=Activation(data["activation"]),
            recurrent_hidden=int(data["recurrent_hidden"]),
            pooling_head=PoolingHead(data["pooling_head"]),
        )


@dataclass(frozen=True)
class FeatureScaler:
    """Per-mel-bin standardisation fitted on training features."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, frames: np.ndarray) -> np.ndarray:
        return (frames - self.mean) / self.std


@dataclass(frozen=True)
class AdamMoments:
    """First/second moment estimates and the number of steps taken."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0


@dataclass(frozen=True)
class ModelState:
    """Flat parameter vector plus the architecture it belongs to."""

    params: np.ndarray
    config: ModelConfig
    scaler: FeatureScaler | None = None
    adam: AdamMoments | None = None


@dataclass(frozen=True)
class TeacherState:
    """Exponential moving average of the student parameters."""

    params: np.ndarray
    ema_alpha: float = 0.999

    def __post_init__(self) -> None:
        if not 0.0 < self.ema_alpha < 1.0:
            raise ValueError(f"ema_alpha must be in (0, 1), got {self.ema_alpha}")


@dataclass(frozen=True)
class Prediction:
    """Sigmoid outputs for one clip."""

    strong: np.ndarray  # (T', C)
    weak: np.ndarray  # (C,)


@dataclass(frozen=True)
class LossWeights:
    """Weights of the unsupervised terms in the overall loss."""

    lambda_unsuper: float = 2.0
    lambda_cr: float = 2.0

    def __post_init__(self) -> None:
        if self.lambda_unsuper < 0 or self.lambda_cr < 0:
            raise ValueError("loss weights must be non-negative")

    @classmethod
    def for_method(cls, method: Method) -> "LossWeights":
        return {
            Method.SUPERVISED: cls(0.0, 0.0),
            Method.MT: cls(2.0, 0.0),
            Method.MT_RDA: cls(2.0, 0.0),
            Method.CR_RDA: cls(0.0, 2.0),
            Method.MT_CR_RDA: cls(2.0, 2.0),
        }[method]


@dataclass(frozen=True)
class ClassScores:
    """Event counts and derived scores for one class."""

    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    @property
    def active(self) -> bool:
        return self.tp + self.fp + self.fn > 0

    def __add__(self, other: "ClassScores") -> "ClassScores":
        return ClassScores(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


@dataclass(frozen=True)
class MetricReport:
    """Per-class event counts and the macro-averaged collar F1."""

    per_class: dict[int, ClassScores]

    @property
    def active_classes(self) -> list[int]:
        return [c for c, scores in sorted(self.per_class.items()) if scores.active]

    @property
    def macro_f1(self) -> float:
        active = self.active_classes
        if not active:
            return 0.0
        return sum(self.per_class[c].f1 for c in active) / len(active)

    def merge(self, other: "MetricReport") -> "MetricReport":
        classes = set(self.per_class) | set(other.per_class)
        return MetricReport(
            {
                c: self.per_class.get(c, ClassScores()) + other.per_class.get(c, ClassScores())
                for c in sorted(classes)
            }
        )
