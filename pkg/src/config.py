"""Run configuration: typed defaults, key = value files and command-line overrides."""

import logging
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any

from src.errors import ConfigError
from src.trainer import TrainConfig
from src.types import Activation, Method, PoolingHead, ScaleMode, ScaleScheme, TransformId

logger = logging.getLogger(__name__)


def _ints(raw: str) -> tuple[int, ...]:
    return tuple(int(part) for part in raw.replace(" ", "").split(",") if part)


def _bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: '{raw}'")


def _transforms(raw: str) -> tuple[TransformId, ...]:
    names = [part.strip() for part in raw.split(",") if part.strip()]
    if names == ["all"]:
        return tuple(TransformId)
    return tuple(TransformId(name) for name in names)


def _optional_int(raw: str) -> int | None:
    return None if raw.strip().lower() in ("", "none", "auto") else int(raw)


def _optional_path(raw: str) -> Path | None:
    return None if raw.strip().lower() in ("", "none") else Path(raw.strip())


def _batch(raw: str) -> tuple[int, int, int]:
    values = _ints(raw)
    if len(values) != 3:
        raise ValueError(f"batch needs three counts (strong,weak,unlabeled), got '{raw}'")
    return values


_PARSERS = {
    "dataset": _optional_path,
    "out_dir": lambda raw: Path(raw.strip()),
    "method": Method,
    "activation": Activation,
    "pooling_head": PoolingHead,
    "scale_mode": ScaleMode,
    "global_scale": int,
    "transforms": _transforms,
    "exclude": _transforms,
    "views": int,
    "seeds": _ints,
    "epochs": int,
    "batch": _batch,
    "steps_per_epoch": _optional_int,
    "ema_alpha": float,
    "conv_blocks": int,
    "channels": _ints,
    "recurrent_hidden": int,
    "median_filter_s": float,
    "checkpoint_every": int,
    "inherit_labels": _bool,
    "workers": int,
    "jobs": int,
}


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved settings of one train / evaluate / ablate invocation."""

    dataset: Path | None = None
    out_dir: Path = Path("runs/latest")
    method: Method = Method.MT_CR_RDA
    activation: Activation = Activation.GLU
    pooling_head: PoolingHead = PoolingHead.ATTENTION
    scale_mode: ScaleMode = ScaleMode.RANDOM
    global_scale: int = 5
    transforms: tuple[TransformId, ...] = tuple(TransformId)
    exclude: tuple[TransformId, ...] = ()
    views: int = 1
    seeds: tuple[int, ...] = (0, 1, 2)
    epochs: int = 40
    batch: tuple[int, int, int] = (2, 2, 4)
    steps_per_epoch: int | None = None
    ema_alpha: float = 0.999
    conv_blocks: int = 2
    channels: tuple[int, ...] = (8, 16)
    recurrent_hidden: int = 32
    median_filter_s: float = 0.45
    checkpoint_every: int = 0
    inherit_labels: bool = False
    workers: int = 1
    jobs: int = 1

    def __post_init__(self) -> None:
        try:
            self.scale_scheme()
        except ValueError as e:
            raise ConfigError(str(e)) from e
        if not self.seeds:
            raise ConfigError("seeds must list at least one seed")
        if self.epochs < 1 or self.views < 1 or self.workers < 1 or self.jobs < 1:
            raise ConfigError("epochs, views, workers and jobs must be positive")
        if not 0.0 < self.ema_alpha < 1.0:
            raise ConfigError(f"ema_alpha must be in (0, 1), got {self.ema_alpha}")
        if len(self.channels) != self.conv_blocks:
            raise ConfigError(
                f"channels {self.channels} must list one width per conv block ({self.conv_blocks})"
            )
        if self.method.uses_augmentation and not self.enabled_transforms:
            raise ConfigError("every transform is excluded; nothing left to augment with")

    @property
    def enabled_transforms(self) -> frozenset[TransformId]:
        return frozenset(self.transforms) - frozenset(self.exclude)

    def scale_scheme(self) -> ScaleScheme:
        return ScaleScheme(mode=self.scale_mode, global_scale=self.global_scale)

    def to_dict(self) -> dict:
        """JSON-ready view with enums as values and paths as strings."""
        out: dict[str, Any] = {}
        for f in fields(self):
            out[f.name] = _plain(getattr(self, f.name))
        return out

    def to_train_config(self) -> TrainConfig:
        return TrainConfig(
            method=self.method,
            activation=self.activation,
            pooling_head=self.pooling_head,
            conv_blocks=self.conv_blocks,
            channels=self.channels,
            recurrent_hidden=self.recurrent_hidden,
            epochs=self.epochs,
            composition=self.batch,
            steps_per_epoch=self.steps_per_epoch,
            views=self.views,
            scale=self.scale_scheme(),
            transforms=self.enabled_transforms,
            ema_alpha=self.ema_alpha,
            median_filter_s=self.median_filter_s,
            checkpoint_every=self.checkpoint_every,
            inherit_labels=self.inherit_labels,
            workers=self.workers,
        )

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        """Inverse of `to_dict` (values may be strings or JSON-native types)."""
        return cls().with_overrides(data)

    def with_overrides(self, overrides: dict[str, Any]) -> "RunConfig":
        """Apply values that are not None; strings go through the key's parser."""
        updates = {}
        for key, raw in overrides.items():
            if raw is None:
                continue
            if key not in _PARSERS:
                raise ConfigError(f"Unknown config key '{key}'")
            updates[key] = _coerce(key, raw)
        try:
            return replace(self, **updates)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e


def _plain(value: Any) -> Any:
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, (Method, Activation, PoolingHead, ScaleMode, TransformId)):
        return value.value
    if isinstance(value, Path):
        return str(value)
    return value


def _coerce(key: str, raw: Any) -> Any:
    parser = _PARSERS[key]
    if isinstance(raw, (list, tuple)):
        raw = ",".join(str(_plain(v)) for v in raw)
    elif isinstance(raw, bool):
        return raw
    elif not isinstance(raw, str):
        raw = str(_plain(raw))
    try:
        return parser(raw)
    except ValueError as e:
        raise ConfigError(f"Bad value for '{key}': {raw!r} ({e})") from e


def read_config_file(path: Path | str) -> dict[str, str]:
    """Parse `key = value` lines; blank lines and `#` comments are skipped.

    Raises:
        ConfigError: On a missing file, a line without '=', or an unknown key.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"Cannot read config file '{path}': {e}") from e

    values: dict[str, str] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path.name} line {line_no}: expected 'key = value'")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(f"{path.name} line {line_no}: unknown key '{key}'")
        values[key] = value
    return values


def resolve_config(
    config_file: Path | None = None, overrides: dict[str, Any] | None = None
) -> RunConfig:
    """Defaults, then the config file, then non-None command-line overrides."""
    config = RunConfig()
    if config_file is not None:
        config = config.with_overrides(read_config_file(config_file))
    if overrides:
        config = config.with_overrides(overrides)
    logger.info("Resolved config: %s", config.to_dict())
    return config

