"""Audio file I/O: 16-bit PCM WAV and the raw SSF0 float format."""

import struct
from pathlib import Path

import numpy as np
import soundfile as sf

from src.errors import DataError
from src.types import Waveform

SSF_MAGIC = b"SSF0"
_SSF_HEADER = struct.Struct("<4sI")


def read_wav(path: Path | str) -> Waveform:
    """Read a mono WAV file as float64 samples in [-1, 1)."""
    try:
        samples, sample_rate = sf.read(str(path), dtype="float64", always_2d=False)
    except RuntimeError as e:
        raise DataError(f"Failed to read WAV '{path}': {e}") from e
    if samples.ndim != 1:
        raise DataError(f"'{path}' has {samples.shape[1]} channels; only mono is supported")
    return Waveform(samples, int(sample_rate))


def write_wav(path: Path | str, w: Waveform) -> None:
    """Write a waveform as 16-bit PCM. Samples outside the PCM range are clipped."""
    samples = np.clip(w.samples, -1.0, 1.0 - 2.0**-15)
    try:
        sf.write(str(path), samples, w.sample_rate, subtype="PCM_16")
    except RuntimeError as e:
        raise DataError(f"Failed to write WAV '{path}': {e}") from e


def read_ssf(path: Path | str) -> Waveform:
    """Read an SSF0 file: magic, u32 sample rate, float32 little-endian samples."""
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"Failed to read SSF0 '{path}': {e}") from e
    if len(data) < _SSF_HEADER.size:
        raise DataError(f"'{path}' is too short to be an SSF0 file")
    magic, sample_rate = _SSF_HEADER.unpack_from(data)
    if magic != SSF_MAGIC:
        raise DataError(f"'{path}' has bad magic {magic!r}")
    body = data[_SSF_HEADER.size :]
    if len(body) % 4:
        raise DataError(f"'{path}' has a truncated sample payload")
    samples = np.frombuffer(body, dtype="<f4").astype(np.float64)
    return Waveform(samples, int(sample_rate))


def write_ssf(path: Path | str, w: Waveform) -> None:
    """Write a waveform losslessly up to float32 precision."""
    payload = _SSF_HEADER.pack(SSF_MAGIC, w.sample_rate) + w.samples.astype("<f4").tobytes()
    Path(path).write_bytes(payload)


def read_audio(path: Path | str) -> Waveform:
    suffix = Path(path).suffix.lower()
    if suffix == ".wav":
        return read_wav(path)
    if suffix == ".ssf":
        return read_ssf(path)
    raise DataError(f"Unsupported audio format '{suffix}' for '{path}'")


def write_audio(path: Path | str, w: Waveform) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".wav":
        write_wav(path, w)
    elif suffix == ".ssf":
        write_ssf(path, w)
    else:
        raise DataError(f"Unsupported audio format '{suffix}' for '{path}'")
