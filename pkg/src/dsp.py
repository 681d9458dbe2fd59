"""Deterministic DSP primitives: STFT, mel filterbank, log-mel features, resampling."""

import math
from dataclasses import dataclass
from functools import lru_cache

import librosa
import numpy as np

from src.types import ComplexSpectrogram, MelSpectrogram, Waveform

EPS_FLOOR = 1e-10
MEL_FLOOR = math.log(EPS_FLOOR)

RESAMPLE_TAPS = 32
KAISER_BETA = 8.0


class SignalTooShortError(ValueError):
    """The signal does not cover a single analysis window."""


@dataclass(frozen=True)
class FeatureConfig:
    """Log-mel extraction settings, fixed per dataset."""

    sample_rate: int = 16000
    window_size: int = 1024
    hop: int = 256
    n_mels: int = 64
    clip_seconds: float = 8.0

    def __post_init__(self) -> None:
        if self.window_size <= 0 or self.hop <= 0:
            raise ValueError("window_size and hop must be positive")
        if self.clip_samples < self.window_size:
            raise ValueError("clip is shorter than one analysis window")

    @classmethod
    def full_scale(cls) -> "FeatureConfig":
        return cls(sample_rate=16000, window_size=2048, hop=255, n_mels=128, clip_seconds=10.0)

    @property
    def clip_samples(self) -> int:
        return int(round(self.clip_seconds * self.sample_rate))

    @property
    def n_frames(self) -> int:
        return 1 + (self.clip_samples - self.window_size) // self.hop

    @property
    def frame_hop_s(self) -> float:
        return self.hop / self.sample_rate

    def padded_frames(self, pool_factor: int) -> int:
        return -(-self.n_frames // pool_factor) * pool_factor

    def output_frames(self, pool_factor: int) -> int:
        return self.padded_frames(pool_factor) // pool_factor

    def output_hop_s(self, pool_factor: int) -> float:
        return self.frame_hop_s * pool_factor

    def to_dict(self) -> dict:
        return {
            "sample_rate": self.sample_rate,
            "window_size": self.window_size,
            "hop": self.hop,
            "n_mels": self.n_mels,
            "clip_seconds": self.clip_seconds,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureConfig":
        return cls(
            sample_rate=int(data["sample_rate"]),
            window_size=int(data["window_size"]),
            hop=int(data["hop"]),
            n_mels=int(data["n_mels"]),
            clip_seconds=float(data["clip_seconds"]),
        )


def pad_or_crop(w: Waveform, n_samples: int) -> Waveform:
    """Zero-pad or crop the tail so the waveform has exactly n_samples."""
    samples = w.samples
    if len(samples) >= n_samples:
        return Waveform(samples[:n_samples].copy(), w.sample_rate)
    return Waveform(np.pad(samples, (0, n_samples - len(samples))), w.sample_rate)


def stft(w: Waveform, window_size: int, hop: int) -> ComplexSpectrogram:
    """Non-centred STFT with a periodic Hann window.

    Raises:
        ValueError: If window_size or hop is not positive.
        SignalTooShortError: If the signal is shorter than one window (callers pad).
    """
    if window_size <= 0 or hop <= 0:
        raise ValueError(f"window_size and hop must be positive, got {window_size}, {hop}")
    if len(w) < window_size:
        raise SignalTooShortError(f"signal of {len(w)} samples is shorter than {window_size}")

    spec = librosa.stft(
        w.samples.astype(np.float64),
        n_fft=window_size,
        hop_length=hop,
        window="hann",
        center=False,
    )
    return ComplexSpectrogram(frames=spec.T, window_size=window_size, hop=hop)


@lru_cache(maxsize=16)
def _mel_matrix_cached(n_fft_bins: int, n_mels: int, sample_rate: int) -> np.ndarray:
    n_fft = 2 * (n_fft_bins - 1)
    matrix = librosa.filters.mel(
        sr=sample_rate, n_fft=n_fft, n_mels=n_mels, htk=True, norm=None, dtype=np.float64
    )
    empty = np.flatnonzero(matrix.sum(axis=1) <= 0)
    if empty.size:
        raise ValueError(
            f"mel filters {empty.tolist()} cover no FFT bin; use fewer mels or a longer window"
        )
    matrix.setflags(write=False)
    return matrix


def mel_matrix(n_fft_bins: int, n_mels: int, sample_rate: int) -> np.ndarray:
    """HTK-scale triangular filterbank of shape (n_mels, n_fft_bins)."""
    if n_mels >= n_fft_bins:
        raise ValueError(f"n_mels ({n_mels}) must be smaller than n_fft_bins ({n_fft_bins})")
    return _mel_matrix_cached(n_fft_bins, n_mels, sample_rate)


def log_mel(w: Waveform, cfg: FeatureConfig) -> MelSpectrogram:
    """log(mel · |STFT|² + EPS_FLOOR) of the clip padded/cropped to cfg.clip_samples."""
    clip = pad_or_crop(w, cfg.clip_samples)
    spec = stft(clip, cfg.window_size, cfg.hop)
    power = np.abs(spec.frames) ** 2
    mel = mel_matrix(power.shape[1], cfg.n_mels, cfg.sample_rate)
    frames = np.log(power @ mel.T + EPS_FLOOR)
    return MelSpectrogram(frames=frames, frame_hop_s=cfg.frame_hop_s)


def pad_frames(m: MelSpectrogram, multiple: int) -> MelSpectrogram:
    """Pad the time axis with the mel floor up to a multiple of `multiple` frames."""
    missing = -m.n_frames % multiple
    if not missing:
        return m
    frames = np.pad(m.frames, ((0, missing), (0, 0)), constant_values=MEL_FLOOR)
    return MelSpectrogram(frames=frames, frame_hop_s=m.frame_hop_s)


def extract_features(w: Waveform, cfg: FeatureConfig, pool_factor: int = 1) -> MelSpectrogram:
    """Model input: log-mel frames padded so the model's time pooling divides T."""
    return pad_frames(log_mel(w, cfg), pool_factor)


def _kaiser(t: np.ndarray, half_width: float) -> np.ndarray:
    ratio = np.clip(t / half_width, -1.0, 1.0)
    return np.i0(KAISER_BETA * np.sqrt(1.0 - ratio**2)) / np.i0(KAISER_BETA)


def resample(w: Waveform, factor: float) -> Waveform:
    """Speed-change resampling with a Kaiser-windowed sinc kernel.

    The output has round(len * factor) samples at the *same* sample rate, so
    factor > 1 slows the signal down and lowers its pitch. Samples outside the
    input count as zeros, which tapers the first and last kernel length.
    """
    if not 0.1 <= factor <= 10:
        raise ValueError(f"resample factor must be in [0.1, 10], got {factor}")

    x = w.samples
    n_out = int(round(len(x) * factor))
    if n_out < 1:
        raise ValueError(f"resampling {len(x)} samples by {factor} leaves no output")

    cutoff = min(1.0, factor)
    half = RESAMPLE_TAPS // 2
    offsets = np.arange(-half + 1, half + 1)
    out = np.empty(n_out)
    # Chunked to bound the (chunk, taps) gather.
    chunk = 16384
    for start in range(0, n_out, chunk):
        positions = np.arange(start, min(start + chunk, n_out)) / factor
        base = np.floor(positions).astype(np.int64)
        idx = base[:, None] + offsets[None, :]
        t = positions[:, None] - idx
        kernel = cutoff * np.sinc(cutoff * t) * _kaiser(t, half)
        kernel /= kernel.sum(axis=1, keepdims=True)
        valid = (idx >= 0) & (idx < len(x))
        taps = np.where(valid, x[np.clip(idx, 0, len(x) - 1)], 0.0)
        out[start : start + len(positions)] = (kernel * taps).sum(axis=1)
    return Waveform(out, w.sample_rate)
