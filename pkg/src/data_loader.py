"""Save and load datasets: audio files plus one JSON-lines label sidecar per split.

Layout of a dataset directory::

    manifest.json          feature config, class count, pool factor, split sidecars
    <split>.jsonl          {"id", "kind", "weak", "events", "file", "sha256"} per clip
    audio/<split>/<id>.wav clip audio (or .ssf)
"""

import hashlib
import json
import logging
from pathlib import Path

import numpy as np

from src.audio_io import read_audio, write_audio
from src.dataset import SedDataset, strong_clip
from src.dsp import FeatureConfig
from src.errors import DataError
from src.types import EventList, LabeledClip, SupervisionKind, WeakLabel

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
FORMAT_VERSION = 1
AUDIO_FORMATS = ("wav", "ssf")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def clip_record(clip: LabeledClip) -> dict:
    """Sidecar record of one clip (without file and checksum fields)."""
    events = []
    if clip.events is not None:
        for c in range(clip.events.n_classes):
            events.extend({"class": c, "onset": on, "offset": off} for on, off in clip.events[c])
        events.sort(key=lambda e: (e["onset"], e["class"], e["offset"]))
    return {
        "id": clip.clip_id,
        "kind": clip.kind.value,
        "weak": clip.weak.vec.astype(int).tolist() if clip.weak is not None else None,
        "events": events,
    }


def save_dataset(
    dataset: SedDataset, path: Path | str, audio_format: str = "wav", force: bool = False
) -> Path:
    """Write every split of `dataset` under `path`.

    Raises:
        DataError: If `path` is a non-empty directory and `force` is not set.
        ValueError: If `audio_format` is not wav or ssf.
    """
    if audio_format not in AUDIO_FORMATS:
        raise ValueError(f"audio_format must be one of {AUDIO_FORMATS}, got '{audio_format}'")
    root = Path(path)
    if root.exists() and any(root.iterdir()) and not force:
        raise DataError(f"'{root}' already exists and is not empty; pass --force to overwrite")

    manifest_splits = {}
    try:
        for split, clips in dataset.splits.items():
            audio_dir = root / "audio" / split
            audio_dir.mkdir(parents=True, exist_ok=True)
            lines = []
            for clip in clips:
                relative = Path("audio") / split / f"{clip.clip_id}.{audio_format}"
                write_audio(root / relative, clip.waveform)
                record = clip_record(clip)
                record["file"] = relative.as_posix()
                record["sha256"] = _sha256(root / relative)
                lines.append(json.dumps(record, sort_keys=True))
            sidecar = f"{split}.jsonl"
            (root / sidecar).write_text("".join(line + "\n" for line in lines))
            manifest_splits[split] = {"sidecar": sidecar, "clips": len(clips)}

        manifest = {
            "format_version": FORMAT_VERSION,
            "feature_config": dataset.feature_cfg.to_dict(),
            "n_classes": dataset.n_classes,
            "pool_factor": dataset.pool_factor,
            "splits": manifest_splits,
            "meta": dataset.meta,
        }
        (root / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as e:
        raise DataError(f"Failed to write dataset to '{root}': {e}") from e

    logger.info("Saved %d splits to %s", len(manifest_splits), root)
    return root


def _parse_record(
    record: dict, root: Path, dataset_cfg: tuple[FeatureConfig, int, int], where: str
) -> LabeledClip:
    feature_cfg, n_classes, pool_factor = dataset_cfg
    try:
        clip_id = str(record["id"])
        kind = SupervisionKind(record["kind"])
        events = EventList(
            n_classes,
            _group_events(record["events"]),
        ).sorted()
        audio_path = root / record["file"]
        checksum = record["sha256"]
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"{where}: malformed record: {e}") from e

    if not audio_path.exists():
        raise DataError(f"{where}: audio file '{audio_path}' is missing")
    if _sha256(audio_path) != checksum:
        raise DataError(f"{where}: checksum mismatch for '{audio_path}'")
    waveform = read_audio(audio_path)

    if kind == SupervisionKind.STRONG:
        clip = strong_clip(
            clip_id,
            waveform,
            events,
            feature_cfg.output_frames(pool_factor),
            feature_cfg.output_hop_s(pool_factor),
        )
        if record.get("weak") is not None and clip.weak.vec.tolist() != list(record["weak"]):
            raise DataError(f"{where}: weak vector of '{clip_id}' disagrees with its events")
        return clip

    weak = None
    if kind == SupervisionKind.WEAK:
        try:
            weak = WeakLabel(np.asarray(record["weak"], dtype=np.uint8))
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"{where}: bad weak vector: {e}") from e
        if weak.vec.shape != (n_classes,):
            raise DataError(f"{where}: weak vector has {weak.vec.size} entries, need {n_classes}")
    return LabeledClip(
        clip_id=clip_id,
        waveform=waveform,
        kind=kind,
        weak=weak,
        events=events if events.count() else None,
    )


def _group_events(raw: list[dict]) -> dict[int, list[tuple[float, float]]]:
    grouped: dict[int, list[tuple[float, float]]] = {}
    for event in raw:
        grouped.setdefault(int(event["class"]), []).append(
            (float(event["onset"]), float(event["offset"]))
        )
    return grouped


def load_dataset(path: Path | str) -> SedDataset:
    """Load a dataset written by `save_dataset`.

    Raises:
        DataError: On a missing manifest or sidecar, a malformed JSON line (the
            message names the file and line number), a missing audio file or a
            checksum mismatch.
    """
    root = Path(path)
    manifest_path = root / MANIFEST
    if not manifest_path.exists():
        raise DataError(f"'{root}' has no {MANIFEST}")
    try:
        manifest = json.loads(manifest_path.read_text())
        feature_cfg = FeatureConfig.from_dict(manifest["feature_config"])
        n_classes = int(manifest["n_classes"])
        pool_factor = int(manifest["pool_factor"])
        split_entries = manifest["splits"]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise DataError(f"Malformed manifest '{manifest_path}': {e}") from e

    dataset_cfg = (feature_cfg, n_classes, pool_factor)
    splits: dict[str, list[LabeledClip]] = {}
    for split, entry in split_entries.items():
        sidecar = root / entry["sidecar"]
        if not sidecar.exists():
            raise DataError(f"Missing sidecar '{sidecar}' for split '{split}'")
        clips = []
        for line_no, line in enumerate(sidecar.read_text().splitlines(), start=1):
            if not line.strip():
                continue
            where = f"{sidecar.name} line {line_no}"
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{where}: invalid JSON: {e.msg}") from e
            if not isinstance(record, dict):
                raise DataError(f"{where}: record is not a JSON object")
            clips.append(_parse_record(record, root, dataset_cfg, where))
        if len(clips) != entry.get("clips", len(clips)):
            raise DataError(
                f"Split '{split}' lists {entry['clips']} clips but its sidecar has {len(clips)}"
            )
        splits[split] = clips

    logger.info("Loaded %s from %s", {s: len(c) for s, c in splits.items()}, root)
    return SedDataset(
        splits=splits,
        feature_cfg=feature_cfg,
        n_classes=n_classes,
        pool_factor=pool_factor,
        meta=manifest.get("meta", {}),
    )
