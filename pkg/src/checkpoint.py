"""SEDM1 checkpoint files.

Layout: b"SEDM1", u32 little-endian header length, UTF-8 JSON header with
sorted keys, then float32 little-endian parameters followed (student files
only) by the Adam first and second moments.
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from src.errors import DataError
from src.model import n_params
from src.types import AdamMoments, FeatureScaler, ModelConfig, ModelState, TeacherState

logger = logging.getLogger(__name__)

MAGIC = b"SEDM1"
_LENGTH = struct.Struct("<I")
STUDENT = "student"
TEACHER = "teacher"


@dataclass(frozen=True)
class Checkpoint:
    """Loaded checkpoint: a ready-to-run state, the EMA record for teacher files, the header."""

    state: ModelState
    teacher: TeacherState | None = None
    header: dict = field(default_factory=dict)

    @property
    def role(self) -> str:
        return self.header.get("role", STUDENT)


def _header(state: ModelState, role: str, extra: dict | None) -> dict:
    header = {
        "format": MAGIC.decode(),
        "role": role,
        "model_config": state.config.to_dict(),
        "n_params": int(state.params.size),
        "scaler": None,
        "adam_t": None,
    }
    if state.scaler is not None:
        header["scaler"] = {
            "mean": state.scaler.mean.tolist(),
            "std": state.scaler.std.tolist(),
        }
    if extra:
        header.update(extra)
    return header


def _write(path: Path, header: dict, arrays: list[np.ndarray]) -> None:
    encoded = json.dumps(header, sort_keys=True).encode()
    payload = b"".join(a.astype("<f4").tobytes() for a in arrays)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(MAGIC + _LENGTH.pack(len(encoded)) + encoded + payload)
    except OSError as e:
        raise DataError(f"Failed to write checkpoint '{path}': {e}") from e
    logger.info("Wrote %s checkpoint %s", header["role"], path)


def save_student(path: Path | str, state: ModelState, extra: dict | None = None) -> None:
    header = _header(state, STUDENT, extra)
    arrays = [state.params]
    if state.adam is not None:
        header["adam_t"] = state.adam.t
        arrays += [state.adam.m, state.adam.v]
    _write(Path(path), header, arrays)


def save_teacher(
    path: Path | str, teacher: TeacherState, student: ModelState, extra: dict | None = None
) -> None:
    """Teacher parameters with the student's architecture and feature scaler."""
    shell = ModelState(params=teacher.params, config=student.config, scaler=student.scaler)
    header = _header(shell, TEACHER, extra)
    header["ema_alpha"] = teacher.ema_alpha
    _write(Path(path), header, [teacher.params])


def load_checkpoint(path: Path | str) -> Checkpoint:
    """Read a student or teacher checkpoint.

    Raises:
        DataError: On a missing file, bad magic, a malformed header or a
            payload whose size does not match the header.
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise DataError(f"Failed to read checkpoint '{path}': {e}") from e

    start = len(MAGIC) + _LENGTH.size
    if len(data) < start or data[: len(MAGIC)] != MAGIC:
        raise DataError(f"'{path}' is not an SEDM1 checkpoint")
    (length,) = _LENGTH.unpack_from(data, len(MAGIC))
    try:
        header = json.loads(data[start : start + length].decode())
        config = ModelConfig.from_dict(header["model_config"])
        n = int(header["n_params"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise DataError(f"'{path}' has a malformed header: {e}") from e
    if n != n_params(config):
        raise DataError(f"'{path}' stores {n} parameters but its config needs {n_params(config)}")

    raw = data[start + length :]
    if len(raw) % 4:
        raise DataError(f"'{path}' has a truncated parameter payload")
    body = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    has_adam = header.get("adam_t") is not None
    expected = n * (3 if has_adam else 1)
    if body.size != expected:
        raise DataError(f"'{path}' holds {body.size} values, header promises {expected}")

    scaler = None
    if header.get("scaler"):
        scaler = FeatureScaler(
            mean=np.asarray(header["scaler"]["mean"], dtype=np.float64),
            std=np.asarray(header["scaler"]["std"], dtype=np.float64),
        )
    adam = None
    if has_adam:
        m, v = body[n : 2 * n].copy(), body[2 * n :].copy()
        adam = AdamMoments(m=m, v=v, t=int(header["adam_t"]))
    state = ModelState(params=body[:n].copy(), config=config, scaler=scaler, adam=adam)

    teacher = None
    if header.get("role") == TEACHER:
        teacher = TeacherState(params=state.params, ema_alpha=float(header["ema_alpha"]))
    return Checkpoint(state=state, teacher=teacher, header=header)
