"""Tests for STFT, mel features and resampling."""

import numpy as np
import pytest

from src.dsp import (
    MEL_FLOOR,
    FeatureConfig,
    SignalTooShortError,
    extract_features,
    log_mel,
    mel_matrix,
    pad_frames,
    pad_or_crop,
    resample,
    stft,
)
from src.types import MelSpectrogram, Waveform


class TestFeatureConfig:
    def test_desk_frame_counts(self):
        cfg = FeatureConfig()
        assert cfg.clip_samples == 128000
        assert cfg.n_frames == 497
        assert cfg.padded_frames(4) == 500
        assert cfg.output_frames(4) == 125

    def test_desk_output_hop(self):
        assert FeatureConfig().output_hop_s(4) == pytest.approx(0.064)

    def test_full_scale_settings(self):
        cfg = FeatureConfig.full_scale()
        assert (cfg.window_size, cfg.hop, cfg.n_mels, cfg.clip_seconds) == (2048, 255, 128, 10.0)
        assert cfg.n_frames == 620

    def test_dict_round_trip(self):
        cfg = FeatureConfig(hop=200, n_mels=40)
        assert FeatureConfig.from_dict(cfg.to_dict()) == cfg

    def test_rejects_clip_shorter_than_window(self):
        with pytest.raises(ValueError, match="shorter"):
            FeatureConfig(window_size=4096, clip_seconds=0.1)


class TestStft:
    def test_sine_peaks_at_its_bin(self):
        """A sine at a bin centre frequency peaks in that bin in every frame."""
        sr, window = 16000, 256
        k = 10
        t = np.arange(sr) / sr
        w = Waveform(np.sin(2 * np.pi * k * sr / window * t), sr)
        spec = stft(w, window, 128)
        assert np.all(np.argmax(np.abs(spec.frames), axis=1) == k)

    def test_frame_count_formula(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            window = int(rng.integers(8, 65))
            hop = int(rng.integers(1, window + 1))
            n = int(rng.integers(window, 600))
            spec = stft(Waveform(rng.standard_normal(n), 8000), window, hop)
            assert spec.n_frames == 1 + (n - window) // hop
            assert spec.frames.shape[1] == window // 2 + 1

    def test_short_signal_raises(self):
        with pytest.raises(SignalTooShortError):
            stft(Waveform(np.zeros(100), 16000), 256, 128)

    def test_bad_hop_raises(self):
        with pytest.raises(ValueError, match="positive"):
            stft(Waveform(np.zeros(1000), 16000), 256, 0)


class TestMel:
    def test_filterbank_shape_and_coverage(self):
        matrix = mel_matrix(129, 16, 16000)
        assert matrix.shape == (16, 129)
        assert np.all(matrix >= 0)
        assert np.all(matrix.sum(axis=1) > 0)

    def test_too_many_mels(self):
        with pytest.raises(ValueError, match="n_mels"):
            mel_matrix(9, 9, 16000)

    def test_silence_sits_on_the_floor(self, feature_cfg):
        m = log_mel(Waveform(np.zeros(feature_cfg.clip_samples), 16000), feature_cfg)
        assert m.frames.shape == (feature_cfg.n_frames, feature_cfg.n_mels)
        np.testing.assert_allclose(m.frames, MEL_FLOOR)

    def test_short_input_is_padded_to_clip_length(self, feature_cfg, sine):
        m = log_mel(sine(440.0, seconds=0.3), feature_cfg)
        assert m.n_frames == feature_cfg.n_frames


class TestPadding:
    def test_pad_or_crop(self):
        w = Waveform(np.arange(5, dtype=np.float64), 8000)
        assert pad_or_crop(w, 3).samples.tolist() == [0, 1, 2]
        assert pad_or_crop(w, 7).samples.tolist() == [0, 1, 2, 3, 4, 0, 0]

    def test_pad_frames_uses_mel_floor(self):
        m = MelSpectrogram(np.zeros((5, 2)), 0.01)
        padded = pad_frames(m, 4)
        assert padded.n_frames == 8
        np.testing.assert_array_equal(padded.frames[5:], MEL_FLOOR)
        assert pad_frames(padded, 4) is padded

    def test_extract_features_divisible_by_pool(self, feature_cfg, sine):
        m = extract_features(sine(1000.0), feature_cfg, pool_factor=8)
        assert m.n_frames % 8 == 0
        assert m.n_frames == feature_cfg.padded_frames(8)


class TestResample:
    def test_output_length(self, sine):
        w = sine(300.0, seconds=0.5)
        assert len(resample(w, 1.25)) == 10000
        assert len(resample(w, 0.8)) == 6400

    def test_round_trip_correlation(self, sine):
        w = sine(500.0)
        back = resample(resample(w, 1.25), 0.8)
        assert len(back) == len(w)
        core = slice(200, len(w) - 200)
        corr = np.corrcoef(w.samples[core], back.samples[core])[0, 1]
        assert corr >= 0.99

    def test_factor_out_of_range(self, sine):
        with pytest.raises(ValueError, match="factor"):
            resample(sine(100.0), 20.0)
