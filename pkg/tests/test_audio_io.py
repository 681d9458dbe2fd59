"""Tests for WAV and SSF0 audio files."""

import numpy as np
import pytest
import soundfile as sf

from src.audio_io import SSF_MAGIC, read_audio, read_ssf, write_audio, write_ssf
from src.errors import DataError
from src.types import Waveform


class TestWav:
    def test_round_trip_within_quantization(self, tmp_path, sine):
        w = sine(440.0, seconds=0.25)
        path = tmp_path / "clip.wav"
        write_audio(path, w)
        back = read_audio(path)
        assert back.sample_rate == 16000
        assert np.max(np.abs(back.samples - w.samples)) <= 2.0**-14

    def test_out_of_range_samples_are_clipped(self, tmp_path):
        path = tmp_path / "loud.wav"
        write_audio(path, Waveform(np.array([2.0, -3.0, 0.5]), 8000))
        back = read_audio(path).samples
        assert 0.999 < back[0] < 1.0
        assert -1.0 <= back[1] < -0.999
        assert back[2] == pytest.approx(0.5, abs=1e-4)

    def test_stereo_is_rejected(self, tmp_path):
        path = tmp_path / "stereo.wav"
        sf.write(str(path), np.zeros((100, 2)), 8000, subtype="PCM_16")
        with pytest.raises(DataError, match="mono"):
            read_audio(path)


class TestSsf:
    def test_lossless_for_float32(self, tmp_path):
        samples = np.random.default_rng(0).standard_normal(500).astype(np.float32)
        path = tmp_path / "clip.ssf"
        write_ssf(path, Waveform(samples.astype(np.float64), 22050))
        back = read_ssf(path)
        assert back.sample_rate == 22050
        np.testing.assert_array_equal(back.samples, samples.astype(np.float64))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ssf"
        path.write_bytes(b"XXXX" + bytes(8))
        with pytest.raises(DataError, match="magic"):
            read_ssf(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "short.ssf"
        path.write_bytes(SSF_MAGIC + (16000).to_bytes(4, "little") + b"\x00\x00")
        with pytest.raises(DataError, match="truncated"):
            read_ssf(path)


class TestDispatch:
    def test_unknown_suffix(self, tmp_path):
        with pytest.raises(DataError, match="Unsupported"):
            write_audio(tmp_path / "clip.mp3", Waveform(np.zeros(10), 8000))
        with pytest.raises(DataError, match="Unsupported"):
            read_audio(tmp_path / "clip.flac")
