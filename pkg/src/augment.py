"""Random audio augmentation: transforms, scale ladder, policy sampling and label transport.

Waveform transforms (speed, time shift, time stretch, pitch shift, DRC, mixup)
run first, features are extracted, then the feature masks run. Every random
outcome is drawn up front by `sample_policy` and stored in the policy step, so
applying a recorded policy is a pure function of the clip and the policy.
"""

import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import librosa
import numpy as np

from src.autodiff import Tensor
from src.dsp import MEL_FLOOR, FeatureConfig, extract_features, pad_or_crop, resample
from src.types import (
    FEATURE_TRANSFORMS,
    AugmentPolicy,
    EventList,
    LabeledClip,
    MelSpectrogram,
    PolicyStep,
    ScaleMode,
    ScaleScheme,
    StrongLabel,
    SupervisionKind,
    TransformId,
    Waveform,
    WeakLabel,
)

logger = logging.getLogger(__name__)

MASK_UNIT_FRACTION = 0.05
SHIFT_RANGE = (0.1, 0.9)
MIXUP_THRESHOLD = 0.5
IDENTITY_TRANSPORT = frozenset(
    {TransformId.PITCH_SHIFT, TransformId.DRC, TransformId.TIME_MASK, TransformId.FREQ_MASK}
)


@dataclass(frozen=True)
class DrcMode:
    """Static compressor curve plus envelope follower time constants."""

    name: str
    threshold_db: float
    ratio: float
    attack_ms: float
    release_ms: float
    makeup_db: float = 0.0


DRC_MODES = (
    DrcMode("A", -20.0, 4.0, 5.0, 50.0),
    DrcMode("B", -30.0, 8.0, 2.0, 100.0),
    DrcMode("C", -15.0, 2.0, 10.0, 200.0),
    DrcMode("D", -25.0, 6.0, 1.0, 30.0),
)


def scale_to_magnitude(transform: TransformId, scale: int) -> float | int | None:
    """Map an integer distortion scale to the transform's magnitude.

    Speed and time stretch use factors 1.05..1.50, pitch shift 0.5..5.0
    semitones, the masks `scale` masking units. Time shift, DRC and mixup
    have a fixed distortion and return None.
    """
    if not 1 <= scale <= 10:
        raise ValueError(f"scale must be in [1, 10], got {scale}")
    if transform in (TransformId.SPEED, TransformId.TIME_STRETCH):
        return round(1.0 + 0.05 * scale, 2)
    if transform == TransformId.PITCH_SHIFT:
        return 0.5 * scale
    if transform in (TransformId.TIME_MASK, TransformId.FREQ_MASK):
        return int(scale)
    return None


# policy sampling ---------------------------------------------------------------


def policy_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    """Counter-based generator keyed by (seed, epoch, clip index)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, epoch, index])))


def _draw_step(rng: np.random.Generator, transform: TransformId, scale: int) -> PolicyStep:
    draws: dict = {}
    if transform in (TransformId.SPEED, TransformId.TIME_STRETCH):
        draws["reciprocal"] = bool(rng.random() < 0.5)
    elif transform == TransformId.PITCH_SHIFT:
        draws["negative"] = bool(rng.random() < 0.5)
    elif transform == TransformId.TIME_SHIFT:
        draws["fraction"] = float(rng.uniform(*SHIFT_RANGE))
    elif transform == TransformId.DRC:
        draws["mode"] = int(rng.integers(len(DRC_MODES)))
    elif transform in (TransformId.TIME_MASK, TransformId.FREQ_MASK):
        draws["positions"] = [float(u) for u in rng.random(scale)]
    elif transform == TransformId.MIXUP:
        draws["partner_u"] = float(rng.random())
    return PolicyStep(transform=transform, scale=scale, draws=draws)


def replay_policy(
    seed: int, p: int, scheme: ScaleScheme, enabled: Iterable[TransformId]
) -> AugmentPolicy:
    """Deterministically rebuild the policy recorded under `seed`."""
    candidates = sorted(set(enabled), key=lambda t: t.value)
    if not candidates:
        raise ValueError("at least one transform must be enabled")
    if p < 1:
        raise ValueError(f"P must be at least 1, got {p}")

    rng = np.random.default_rng(seed)
    steps = []
    for _ in range(p):
        transform = candidates[int(rng.integers(len(candidates)))]
        if scheme.mode == ScaleMode.FIXED:
            scale = scheme.global_scale
        else:
            scale = int(rng.integers(1, scheme.global_scale + 1))
        steps.append(_draw_step(rng, transform, scale))
    return AugmentPolicy(steps=tuple(steps), seed=seed)


def sample_policy(
    rng: np.random.Generator, p: int, scheme: ScaleScheme, enabled: Iterable[TransformId]
) -> AugmentPolicy:
    """Draw P transforms uniformly from `enabled`, each with its scale and random outcomes."""
    seed = int(rng.integers(0, 2**63))
    return replay_policy(seed, p, scheme, enabled)


def effective_factor(step: PolicyStep) -> float:
    """Speed / stretch factor after the reciprocal coin flip."""
    factor = scale_to_magnitude(step.transform, step.scale)
    return 1.0 / factor if step.draws.get("reciprocal") else factor


def effective_semitones(step: PolicyStep) -> float:
    semitones = scale_to_magnitude(TransformId.PITCH_SHIFT, step.scale)
    return -semitones if step.draws.get("negative") else semitones


def mixup_partner(step: PolicyStep, position: int, batch_size: int) -> int:
    """Batch position of the mixup partner: uniform over the other batch elements."""
    if batch_size < 2:
        raise ValueError("mixup needs a mini-batch of at least two clips")
    offset = 1 + min(int(step.draws["partner_u"] * (batch_size - 1)), batch_size - 2)
    return (position + offset) % batch_size


# waveform transforms -------------------------------------------------------------


def _fit(w: Waveform, length: int | None) -> Waveform:
    return w if length is None else pad_or_crop(w, length)


def speed(w: Waveform, factor: float, length: int | None = None) -> Waveform:
    """Play back `factor` times faster: len/factor samples, frequencies scaled by factor."""
    return _fit(resample(w, 1.0 / factor), length)


def roll(w: Waveform, fraction: float) -> Waveform:
    """Circularly rotate by round(fraction * len) samples."""
    shift = int(round(fraction * len(w)))
    return Waveform(np.roll(w.samples, shift), w.sample_rate)


def time_shift(w: Waveform, rng: np.random.Generator) -> tuple[Waveform, float]:
    fraction = float(rng.uniform(*SHIFT_RANGE))
    return roll(w, fraction), fraction


def time_stretch(w: Waveform, factor: float, length: int | None = None) -> Waveform:
    """Phase-vocoder stretch to about len/factor samples, pitch preserved."""
    stretched = librosa.effects.time_stretch(w.samples, rate=factor)
    return _fit(Waveform(np.ascontiguousarray(stretched, dtype=np.float64), w.sample_rate), length)


def pitch_shift(w: Waveform, semitones: float, length: int | None = None) -> Waveform:
    """Shift pitch by `semitones` keeping the input length.

    Speeds the signal up by r = 2^(semitones/12), which scales every frequency
    by r, then stretches it back by 1/r.
    """
    ratio = 2.0 ** (semitones / 12.0)
    shifted = time_stretch(speed(w, ratio), 1.0 / ratio)
    return pad_or_crop(shifted, len(w) if length is None else length)


def compress(w: Waveform, mode: DrcMode) -> Waveform:
    """Feed-forward hard-knee compressor driven by a one-pole peak envelope."""
    sr = w.sample_rate
    attack = math.exp(-1.0 / (mode.attack_ms * 1e-3 * sr))
    release = math.exp(-1.0 / (mode.release_ms * 1e-3 * sr))

    envelope = np.empty(len(w))
    env = 0.0
    for i, level in enumerate(np.abs(w.samples).tolist()):
        coef = attack if level > env else release
        env = coef * env + (1.0 - coef) * level
        envelope[i] = env

    env_db = 20.0 * np.log10(np.maximum(envelope, 1e-12))
    over_db = np.maximum(env_db - mode.threshold_db, 0.0)
    gain_db = mode.makeup_db - over_db * (1.0 - 1.0 / mode.ratio)
    return Waveform(w.samples * 10.0 ** (gain_db / 20.0), sr)


def drc(w: Waveform, rng: np.random.Generator) -> Waveform:
    """Compress with one of the preset modes chosen uniformly."""
    return compress(w, DRC_MODES[int(rng.integers(len(DRC_MODES)))])


# feature transforms --------------------------------------------------------------


def mask_width(n: int) -> int:
    """Frames (or bins) in one masking unit: 5% of the axis, rounded half up."""
    return int(math.floor(MASK_UNIT_FRACTION * n + 0.5))


def _check_units(units: int) -> None:
    if not 1 <= units <= 10:
        raise ValueError(f"masking units must be in [1, 10], got {units}")


def _mask_axis(
    m: MelSpectrogram, positions: Sequence[float], axis: int, n_valid: int | None = None
) -> MelSpectrogram:
    frames = m.frames.copy()
    n = frames.shape[axis] if n_valid is None else min(n_valid, frames.shape[axis])
    width = mask_width(n)
    for u in positions:
        start = min(int(u * (n - width + 1)), n - width)
        if axis == 0:
            frames[start : start + width, :] = MEL_FLOOR
        else:
            frames[:, start : start + width] = MEL_FLOOR
    return MelSpectrogram(frames=frames, frame_hop_s=m.frame_hop_s)


def mask_time(
    m: MelSpectrogram, positions: Sequence[float], n_valid: int | None = None
) -> MelSpectrogram:
    """Set one unit-wide block of frames to the mel floor per start position in [0, 1).

    Width and placement count only the first `n_valid` frames, so pooling pad
    frames at the tail are never masked.
    """
    return _mask_axis(m, positions, axis=0, n_valid=n_valid)


def mask_freq(m: MelSpectrogram, positions: Sequence[float]) -> MelSpectrogram:
    return _mask_axis(m, positions, axis=1)


def time_mask(m: MelSpectrogram, units: int, rng: np.random.Generator) -> MelSpectrogram:
    _check_units(units)
    return mask_time(m, rng.random(units).tolist())


def freq_mask(m: MelSpectrogram, units: int, rng: np.random.Generator) -> MelSpectrogram:
    _check_units(units)
    return mask_freq(m, rng.random(units).tolist())


# mixup -------------------------------------------------------------------------


def _or(a: np.ndarray | None, b: np.ndarray | None) -> np.ndarray | None:
    if a is None or b is None:
        return None
    return (a.astype(bool) | b.astype(bool)).astype(np.uint8)


def mixup(a: LabeledClip, b: LabeledClip) -> LabeledClip:
    """Sum two clips without rescaling; labels are OR-ed, supervision is the weaker kind."""
    if len(a.waveform) != len(b.waveform):
        raise ValueError(f"cannot mix clips of {len(a.waveform)} and {len(b.waveform)} samples")
    if a.waveform.sample_rate != b.waveform.sample_rate:
        raise ValueError("cannot mix clips with different sample rates")

    kind = a.kind.weaker(b.kind)
    waveform = Waveform(a.waveform.samples + b.waveform.samples, a.waveform.sample_rate)
    strong = weak = None
    if kind == SupervisionKind.STRONG:
        strong = StrongLabel(_or(a.strong.grid, b.strong.grid), a.strong.frame_hop_s)
    if kind != SupervisionKind.UNLABELED:
        weak = WeakLabel(_or(a.weak.vec, b.weak.vec))
    events: EventList | None = None
    if a.events is not None and b.events is not None:
        events = a.events.union(b.events)
    return LabeledClip(
        clip_id=f"{a.clip_id}+{b.clip_id}",
        waveform=waveform,
        kind=kind,
        strong=strong,
        weak=weak,
        events=events,
    )


# label / prediction transport ----------------------------------------------------


def frame_index_map(step: PolicyStep, n_frames: int) -> np.ndarray | None:
    """Source frame for every output frame of the transformed clip (-1 marks padding).

    None means the transform leaves the time axis alone.
    """
    transform = step.transform
    if transform in IDENTITY_TRANSPORT or transform == TransformId.MIXUP:
        return None
    if transform == TransformId.TIME_SHIFT:
        shift = int(round(step.draws["fraction"] * n_frames))
        return (np.arange(n_frames) - shift) % n_frames
    if transform in (TransformId.SPEED, TransformId.TIME_STRETCH):
        factor = effective_factor(step)
        kept = min(int(round(n_frames / factor)), n_frames)
        idx = np.full(n_frames, -1, dtype=np.int64)
        source = np.floor((np.arange(kept) + 0.5) * factor).astype(np.int64)
        idx[:kept] = np.minimum(source, n_frames - 1)
        return idx
    raise ValueError(f"unknown transform {transform!r}")


def _gather(x, idx: np.ndarray):
    return x[np.clip(idx, 0, None)] * (idx >= 0)[:, None]


def _values(x) -> np.ndarray:
    return x.value if isinstance(x, Tensor) else np.asarray(x)


def _binary_or(a, b) -> np.ndarray:
    return ((_values(a) > MIXUP_THRESHOLD) | (_values(b) > MIXUP_THRESHOLD)).astype(np.float64)


def transport(step: PolicyStep, grid, partner=None):
    """Map a (T', C) reference grid of the original clip into the transformed clip's time base.

    Works on label arrays and on tape tensors alike. For mixup the reference is
    the OR of both parents binarized at 0.5, which is a constant. A missing grid
    (weak or unlabelled clip) stays None.
    """
    if not isinstance(step.transform, TransformId):
        raise ValueError(f"unknown transform {step.transform!r}")
    if grid is None:
        return None
    if step.transform == TransformId.MIXUP:
        if partner is None:
            raise ValueError("mixup transport needs the partner's grid")
        return _binary_or(grid, partner)
    idx = frame_index_map(step, grid.shape[0])
    return grid if idx is None else _gather(grid, idx)


def transport_weak(step: PolicyStep, weak, partner=None):
    """Clip-level reference: unchanged, except the binarized OR for mixup."""
    if weak is None:
        return None
    if step.transform == TransformId.MIXUP:
        if partner is None:
            raise ValueError("mixup transport needs the partner's weak vector")
        return _binary_or(weak, partner)
    return weak


def transport_policy(
    steps: Sequence[PolicyStep],
    strong,
    weak,
    partner_strong: Sequence | None = None,
    partner_weak: Sequence | None = None,
    inherit_labels: bool = False,
):
    """Compose transport over every step of a view, in order.

    With `inherit_labels` the time axis is never warped; only mixup changes the grid.
    """
    partner_strong = partner_strong or [None] * len(steps)
    partner_weak = partner_weak or [None] * len(steps)
    for step, p_strong, p_weak in zip(steps, partner_strong, partner_weak):
        if inherit_labels and step.transform != TransformId.MIXUP:
            continue
        strong = transport(step, strong, p_strong)
        weak = transport_weak(step, weak, p_weak)
    return strong, weak


# view construction ---------------------------------------------------------------


@dataclass(frozen=True)
class AugmentedView:
    """One augmented view of a clip, ready for the model."""

    features: MelSpectrogram
    waveform: Waveform
    kind: SupervisionKind
    strong: np.ndarray | None
    weak: np.ndarray | None
    steps: tuple[PolicyStep, ...]


def apply_waveform_step(step: PolicyStep, w: Waveform, partner: LabeledClip | None) -> Waveform:
    n = len(w)
    transform = step.transform
    if transform == TransformId.SPEED:
        return speed(w, effective_factor(step), length=n)
    if transform == TransformId.TIME_SHIFT:
        return roll(w, step.draws["fraction"])
    if transform == TransformId.TIME_STRETCH:
        return time_stretch(w, effective_factor(step), length=n)
    if transform == TransformId.PITCH_SHIFT:
        return pitch_shift(w, effective_semitones(step), length=n)
    if transform == TransformId.DRC:
        return compress(w, DRC_MODES[step.draws["mode"]])
    if transform == TransformId.MIXUP:
        if partner is None:
            raise ValueError("mixup step has no partner clip")
        if len(partner.waveform) != n:
            raise ValueError(f"cannot mix clips of {n} and {len(partner.waveform)} samples")
        return Waveform(w.samples + partner.waveform.samples, w.sample_rate)
    raise ValueError(f"{transform!r} is not a waveform transform")


def apply_feature_step(
    step: PolicyStep, m: MelSpectrogram, n_valid: int | None = None
) -> MelSpectrogram:
    if step.transform == TransformId.TIME_MASK:
        return mask_time(m, step.draws["positions"], n_valid)
    if step.transform == TransformId.FREQ_MASK:
        return mask_freq(m, step.draws["positions"])
    raise ValueError(f"{step.transform!r} is not a feature transform")


def apply_steps(
    clip: LabeledClip,
    steps: Sequence[PolicyStep],
    partners: Sequence[LabeledClip | None],
    feature_cfg: FeatureConfig,
    pool_factor: int,
    inherit_labels: bool = False,
) -> AugmentedView:
    """Augment one clip: waveform steps, feature extraction, then feature steps.

    `partners[i]` is the original mixup partner of step i (None for other steps).
    Labels follow the same transport as reference predictions.
    """
    if len(partners) != len(steps):
        raise ValueError("one partner slot is needed per step")

    w = clip.waveform
    kind = clip.kind
    for step, partner in zip(steps, partners):
        if step.transform in FEATURE_TRANSFORMS:
            continue
        w = apply_waveform_step(step, w, partner)
        if step.transform == TransformId.MIXUP:
            kind = kind.weaker(partner.kind)

    features = extract_features(w, feature_cfg, pool_factor)
    for step in steps:
        if step.transform in FEATURE_TRANSFORMS:
            features = apply_feature_step(step, features, feature_cfg.n_frames)

    strong = weak = None
    if kind != SupervisionKind.UNLABELED:
        partner_strong = [
            p.strong.grid if p is not None and p.strong is not None else None for p in partners
        ]
        partner_weak = [
            p.weak.vec if p is not None and p.weak is not None else None for p in partners
        ]
        strong, weak = transport_policy(
            steps,
            clip.strong.grid if kind == SupervisionKind.STRONG else None,
            clip.weak.vec,
            partner_strong,
            partner_weak,
            inherit_labels,
        )
        if kind == SupervisionKind.STRONG:
            strong = np.asarray(strong).astype(np.uint8)
            weak = strong.any(axis=0).astype(np.uint8)
        else:
            strong = None
            weak = np.asarray(weak).astype(np.uint8)

    return AugmentedView(
        features=features,
        waveform=w,
        kind=kind,
        strong=strong,
        weak=weak,
        steps=tuple(steps),
    )
