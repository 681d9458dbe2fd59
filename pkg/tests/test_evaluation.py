"""Tests for post-processing, decoding and collar F1."""

from dataclasses import replace

import numpy as np
import pytest

from src.dataset import rasterize
from src.evaluation import (
    collar_f1,
    decode_events,
    evaluate_model,
    events_compatible,
    greedy_match,
    median_filter,
    median_kernel_size,
    median_smooth,
)
from src.model import init_state
from src.types import ClassScores, EventList, MetricReport, ModelConfig


class TestMedianFilter:
    def test_kernel_size(self):
        assert median_kernel_size(0.45, 0.064) == 7
        assert median_kernel_size(0.45, 0.016) == 29
        assert median_kernel_size(0.1, 1.0) == 1

    def test_kernel_needs_duration(self):
        with pytest.raises(ValueError, match="positive"):
            median_kernel_size(0.0, 0.064)

    def test_threshold_is_strict(self):
        probs = np.array([[0.5], [0.51], [0.49]])
        assert median_filter(probs, 0.01, 1.0)[:, 0].tolist() == [0, 1, 0]

    def test_blip_and_gap(self):
        column = np.array([0, 0, 1, 0, 0, 1, 1, 0, 1, 1, 0, 0])
        smoothed = median_smooth(column[:, None], 3)[:, 0]
        assert smoothed.tolist() == [0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 0, 0]

    def test_edges_replicated(self):
        column = np.array([1, 0, 0, 0, 1])
        assert median_smooth(column[:, None], 3)[:, 0].tolist() == [1, 0, 0, 0, 1]

    def test_classes_independent(self):
        grid = np.array([[1, 0], [1, 0], [1, 1], [0, 0]])
        out = median_smooth(grid, 3)
        assert out[:, 0].tolist() == [1, 1, 1, 0]
        assert out[:, 1].tolist() == [0, 0, 0, 0]

    def test_counterexample_needs_second_pass(self):
        column = np.array([0, 0, 1, 0, 1, 0, 0])[:, None]
        once = median_smooth(column, 3)
        assert once[:, 0].tolist() == [0, 0, 0, 1, 0, 0, 0]
        assert not np.array_equal(median_smooth(once, 3), once)

    def test_idempotent_without_alternating_windows(self):
        """A second pass changes nothing unless the grid holds 01010 or 10101 in one column."""
        rng = np.random.default_rng(3)
        checked = 0
        for _ in range(1000):
            n_frames, n_classes = int(rng.integers(5, 60)), int(rng.integers(1, 4))
            runs = median_smooth(rng.random((n_frames, n_classes)) < 0.4, 5)
            grid = runs ^ (rng.random(runs.shape) < 0.05)
            once = median_smooth(grid, 3)
            twice = median_smooth(once, 3)
            for c in range(n_classes):
                windows = np.lib.stride_tricks.sliding_window_view(grid[:, c], 5)
                alternating = (np.abs(np.diff(windows.astype(np.int8), axis=1)) == 1).all(axis=1)
                if alternating.any():
                    continue
                np.testing.assert_array_equal(twice[:, c], once[:, c])
                checked += 1
        assert checked > 1000


class TestDecode:
    def test_single_run(self):
        events = decode_events(np.array([[0], [1], [1], [0]]), 0.064)
        [(onset, offset)] = events[0]
        assert onset == pytest.approx(0.064)
        assert offset == pytest.approx(0.192)

    def test_run_touching_end(self):
        events = decode_events(np.array([[1, 0], [1, 1]]), 0.5)
        assert events[0] == [(0.0, 1.0)]
        assert events[1] == [(0.5, 1.0)]

    def test_empty(self):
        assert decode_events(np.zeros((5, 2)), 0.1).count() == 0

    def test_rasterizing_events_recovers_grid(self):
        """Decoded runs cover exactly the frames whose centres they contain."""
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n_frames, n_classes = int(rng.integers(1, 30)), int(rng.integers(1, 4))
            grid = (rng.random((n_frames, n_classes)) < rng.random()).astype(np.uint8)
            hop = float(rng.choice([0.016, 0.064, 0.1]))
            events = decode_events(grid, hop)
            np.testing.assert_array_equal(rasterize(events, n_frames, hop), grid)
            for c in range(n_classes):
                runs = events[c]
                assert all(a[1] < b[0] for a, b in zip(runs, runs[1:]))


class TestCompatibility:
    def test_onset_collar(self):
        assert events_compatible((1.0, 2.0), (1.2, 2.0))
        assert events_compatible((1.0, 2.0), (0.8, 2.0))
        assert not events_compatible((1.0, 2.0), (1.21, 2.0))

    def test_short_reference_uses_fixed_offset_collar(self):
        assert events_compatible((1.0, 1.5), (1.0, 1.7))
        assert not events_compatible((1.0, 1.5), (1.0, 1.71))

    def test_long_reference_uses_relative_offset_collar(self):
        assert events_compatible((1.0, 4.0), (1.0, 4.6))
        assert not events_compatible((1.0, 4.0), (1.0, 4.61))


class TestCollarF1:
    def test_perfect(self):
        ref = EventList(2, {0: [(0.0, 1.0), (2.0, 3.0)], 1: [(0.5, 1.5)]})
        report = collar_f1(ref, ref)
        assert report.macro_f1 == 1.0
        assert report.per_class[0] == ClassScores(tp=2, fp=0, fn=0)

    def test_counts(self):
        ref = EventList(2, {0: [(0.0, 1.0), (2.0, 3.0)], 1: [(0.5, 1.5)]})
        est = EventList(2, {0: [(0.1, 1.1), (5.0, 6.0)], 1: [(0.5, 1.5)]})
        report = collar_f1(ref, est)
        assert report.per_class[0] == ClassScores(tp=1, fp=1, fn=1)
        assert report.per_class[0].f1 == pytest.approx(0.5)
        assert report.macro_f1 == pytest.approx(0.75)

    def test_matches_never_cross_classes(self):
        ref = EventList(2, {0: [(0.0, 1.0)]})
        est = EventList(2, {1: [(0.0, 1.0)]})
        report = collar_f1(ref, est)
        assert report.per_class[0] == ClassScores(fn=1)
        assert report.per_class[1] == ClassScores(fp=1)
        assert report.macro_f1 == 0.0

    def test_inactive_classes_excluded(self):
        ref = EventList(3, {0: [(0.0, 1.0)]})
        report = collar_f1(ref, ref)
        assert report.active_classes == [0]
        assert report.macro_f1 == 1.0

    def test_nothing_to_score(self):
        assert collar_f1(EventList(2), EventList(2)).macro_f1 == 0.0

    def test_one_estimate_per_reference(self):
        ref = EventList(1, {0: [(0.0, 1.0)]})
        est = EventList(1, {0: [(0.0, 1.0), (0.05, 1.05)]})
        assert collar_f1(ref, est).per_class[0] == ClassScores(tp=1, fp=1, fn=0)

    def test_unsorted_input(self):
        ref = EventList(1, {0: [(2.0, 3.0), (0.0, 1.0)]})
        est = EventList(1, {0: [(0.0, 1.0), (2.0, 3.0)]})
        assert collar_f1(ref, est).per_class[0].tp == 2

    def test_class_count_mismatch(self):
        with pytest.raises(ValueError, match="classes"):
            collar_f1(EventList(1), EventList(2))

    @pytest.mark.parametrize("delta", [0.5, 1.3, -0.25])
    def test_invariant_under_time_translation(self, delta):
        rng = np.random.default_rng(8)
        for _ in range(200):
            ref, est = (
                EventList(
                    3,
                    {
                        c: [(on, on + rng.uniform(0.1, 2.0)) for on in rng.uniform(0, 8, size=k)]
                        for c, k in enumerate(rng.integers(0, 4, size=3))
                    },
                )
                for _ in range(2)
            )
            before = collar_f1(ref, est)
            after = collar_f1(ref.shifted(delta), est.shifted(delta))
            assert after.per_class == before.per_class

    def test_greedy_takes_earliest_free_estimate(self):
        ref = [(0.0, 1.0), (0.3, 1.3)]
        est = [(0.15, 1.0), (0.1, 1.1)]
        assert greedy_match(ref, est) == 1

    def test_merge_accumulates_counts(self):
        a = MetricReport({0: ClassScores(1, 0, 1), 1: ClassScores()})
        b = MetricReport({0: ClassScores(1, 1, 0), 2: ClassScores(0, 1, 0)})
        merged = a.merge(b)
        assert merged.per_class[0] == ClassScores(2, 1, 1)
        assert merged.active_classes == [0, 2]


class TestEvaluateModel:
    @pytest.fixture
    def state(self):
        config = ModelConfig(
            n_mels=16, n_classes=3, conv_blocks=1, channels=(2,), pool_factor=2, recurrent_hidden=3
        )
        return init_state(config, seed=0)

    def test_counts_every_reference_event(self, state, tiny_dataset):
        clips = tiny_dataset["test"]
        report = evaluate_model(state, clips, tiny_dataset.feature_cfg)
        n_ref = sum(clip.events.count() for clip in clips)
        assert sum(s.tp + s.fn for s in report.per_class.values()) == n_ref
        assert set(report.per_class) == {0, 1, 2}
        assert 0.0 <= report.macro_f1 <= 1.0

    def test_batch_size_does_not_matter(self, state, tiny_dataset):
        clips = tiny_dataset["test"]
        a = evaluate_model(state, clips, tiny_dataset.feature_cfg, batch_size=1)
        b = evaluate_model(state, clips, tiny_dataset.feature_cfg, batch_size=16)
        assert a.per_class == b.per_class

    def test_needs_ground_truth(self, state, tiny_dataset):
        clip = replace(tiny_dataset["train"][8], events=None)
        with pytest.raises(ValueError, match="ground-truth"):
            evaluate_model(state, [clip], tiny_dataset.feature_cfg)
