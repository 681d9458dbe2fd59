"""Post-processing, event decoding and event-based collar F1."""

import logging
import math
from collections.abc import Callable, Sequence

import numpy as np
from scipy import ndimage

from src.dsp import FeatureConfig, extract_features
from src.model import predict
from src.types import ClassScores, EventList, LabeledClip, MelSpectrogram, MetricReport, ModelState

logger = logging.getLogger(__name__)

THRESHOLD = 0.5
ONSET_COLLAR_S = 0.2
OFFSET_RATIO = 0.2
MEDIAN_FILTER_S = 0.45
_TOLERANCE = 1e-9

Interval = tuple[float, float]
Matcher = Callable[[Sequence[Interval], Sequence[Interval], float, float], int]


def median_kernel_size(duration_s: float, frame_hop_s: float) -> int:
    """Nearest odd integer to duration_s / frame_hop_s (at least 1)."""
    if duration_s <= 0:
        raise ValueError(f"median filter duration must be positive, got {duration_s}")
    frames = duration_s / frame_hop_s
    return max(1, 2 * int(math.floor((frames - 1.0) / 2.0 + 0.5)) + 1)


def median_smooth(binary: np.ndarray, kernel: int) -> np.ndarray:
    """Per-class sliding median along time, edges replicated."""
    return ndimage.median_filter(binary.astype(np.uint8), size=(kernel, 1), mode="nearest")


def median_filter(strong: np.ndarray, duration_s: float, frame_hop_s: float) -> np.ndarray:
    """Binarize (T', C) probabilities above 0.5, then median-smooth each class."""
    binary = (np.asarray(strong) > THRESHOLD).astype(np.uint8)
    return median_smooth(binary, median_kernel_size(duration_s, frame_hop_s))


def decode_events(binary: np.ndarray, frame_hop_s: float) -> EventList:
    """Every maximal run of ones becomes (start * hop, (end + 1) * hop)."""
    n_frames, n_classes = binary.shape
    events: dict[int, list[Interval]] = {}
    for c in range(n_classes):
        padded = np.concatenate(([0], binary[:, c].astype(np.int8), [0]))
        edges = np.diff(padded)
        starts = np.flatnonzero(edges == 1)
        ends = np.flatnonzero(edges == -1)
        events[c] = [(s * frame_hop_s, e * frame_hop_s) for s, e in zip(starts, ends)]
    return EventList(n_classes, events)


def events_compatible(
    ref: Interval,
    est: Interval,
    onset_collar_s: float = ONSET_COLLAR_S,
    offset_ratio: float = OFFSET_RATIO,
) -> bool:
    """Onset within the collar and offset within max(collar, ratio * reference length)."""
    offset_collar = max(onset_collar_s, offset_ratio * (ref[1] - ref[0]))
    return (
        abs(est[0] - ref[0]) <= onset_collar_s + _TOLERANCE
        and abs(est[1] - ref[1]) <= offset_collar + _TOLERANCE
    )


def greedy_match(
    ref: Sequence[Interval],
    est: Sequence[Interval],
    onset_collar_s: float = ONSET_COLLAR_S,
    offset_ratio: float = OFFSET_RATIO,
) -> int:
    """One-to-one matches, references in onset order each taking the earliest free estimate."""
    free = sorted(range(len(est)), key=lambda j: (est[j][0], est[j][1], j))
    matched = 0
    for r in sorted(ref):
        for position, j in enumerate(free):
            if events_compatible(r, est[j], onset_collar_s, offset_ratio):
                del free[position]
                matched += 1
                break
    return matched


def collar_f1(
    ref: EventList,
    est: EventList,
    onset_collar_s: float = ONSET_COLLAR_S,
    offset_ratio: float = OFFSET_RATIO,
    matcher: Matcher = greedy_match,
) -> MetricReport:
    """Per-class TP / FP / FN under the collar rule; matches never cross classes."""
    if ref.n_classes != est.n_classes:
        raise ValueError(f"reference has {ref.n_classes} classes, estimate {est.n_classes}")
    if not ref.is_sorted():
        logger.debug("Sorting unsorted reference events")
        ref = ref.sorted()
    if not est.is_sorted():
        logger.debug("Sorting unsorted estimated events")
        est = est.sorted()

    per_class = {}
    for c in range(ref.n_classes):
        tp = matcher(ref[c], est[c], onset_collar_s, offset_ratio)
        per_class[c] = ClassScores(tp=tp, fp=len(est[c]) - tp, fn=len(ref[c]) - tp)
    report = MetricReport(per_class)
    excluded = [c for c in per_class if c not in report.active_classes]
    if excluded:
        logger.debug("Classes %s have no events and are left out of the macro F1", excluded)
    return report


def evaluate_model(
    state: ModelState,
    clips: Sequence[LabeledClip],
    feature_cfg: FeatureConfig,
    median_filter_s: float = MEDIAN_FILTER_S,
    features: Sequence[MelSpectrogram] | None = None,
    batch_size: int = 16,
) -> MetricReport:
    """Forward, median filter, decode and score every clip; counts accumulate globally."""
    if any(clip.events is None for clip in clips):
        raise ValueError("every evaluation clip needs ground-truth events")
    pool = state.config.pool_factor
    hop = feature_cfg.output_hop_s(pool)
    if features is None:
        features = [extract_features(clip.waveform, feature_cfg, pool) for clip in clips]

    report = MetricReport({c: ClassScores() for c in range(state.config.n_classes)})
    for clip, prediction in zip(clips, predict(state, features, batch_size=batch_size)):
        estimated = decode_events(median_filter(prediction.strong, median_filter_s, hop), hop)
        report = report.merge(collar_f1(clip.events, estimated))
    return report
