"""Reduced gated CRNN over log-mel features and the Adam optimizer that trains it.

Parameters live in one flat float64 vector; `param_layout` fixes the order.
The network is: gated 3x3 conv blocks with average pooling, one bidirectional
GRU over time, a sigmoid dense layer for frame (strong) predictions and an
attention or mean head for clip (weak) predictions.
"""

import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np

from src.autodiff import Tape, Tensor, avg_pool2d, concat, conv2d, lift, softmax, stack
from src.errors import NumericalError
from src.types import (
    Activation,
    AdamMoments,
    FeatureScaler,
    MelSpectrogram,
    ModelConfig,
    ModelState,
    PoolingHead,
    Prediction,
)

logger = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
SCALER_STD_FLOOR = 1e-6


@dataclass(frozen=True)
class ParamSlot:
    offset: int
    shape: tuple[int, ...]
    fan: tuple[int, int] | None  # None for biases

    @property
    def size(self) -> int:
        return math.prod(self.shape)


def _time_pool(config: ModelConfig, block: int) -> int:
    return 2 if block < int(math.log2(config.pool_factor)) else 1


def param_layout(config: ModelConfig) -> dict[str, ParamSlot]:
    """Name -> (offset, shape) of every parameter tensor, in flat-vector order."""
    shapes: list[tuple[str, tuple[int, ...], tuple[int, int] | None]] = []
    c_in = 1
    for i, c_out in enumerate(config.channels):
        if config.activation == Activation.GLU:
            shapes.append((f"conv{i}.w", (2 * c_out, c_in, 3, 3), (9 * c_in, 9 * c_out)))
            shapes.append((f"conv{i}.b", (2 * c_out,), None))
        else:
            shapes.append((f"conv{i}.w", (c_out, c_in, 3, 3), (9 * c_in, 9 * c_out)))
            shapes.append((f"conv{i}.b", (c_out,), None))
            shapes.append((f"gate{i}.w", (c_out, c_out), (c_out, c_out)))
            shapes.append((f"gate{i}.b", (c_out,), None))
        c_in = c_out

    d = c_in * (config.n_mels // 2**config.conv_blocks)
    h = config.recurrent_hidden
    for direction in ("fwd", "bwd"):
        shapes.append((f"gru_{direction}.wx", (d, 3 * h), (d, h)))
        shapes.append((f"gru_{direction}.wh", (h, 3 * h), (h, h)))
        shapes.append((f"gru_{direction}.b", (3 * h,), None))

    shapes.append(("strong.w", (2 * h, config.n_classes), (2 * h, config.n_classes)))
    shapes.append(("strong.b", (config.n_classes,), None))
    if config.pooling_head == PoolingHead.ATTENTION:
        shapes.append(("attention.w", (2 * h, config.n_classes), (2 * h, config.n_classes)))
        shapes.append(("attention.b", (config.n_classes,), None))

    layout: dict[str, ParamSlot] = {}
    offset = 0
    for name, shape, fan in shapes:
        layout[name] = ParamSlot(offset, shape, fan)
        offset += layout[name].size
    return layout


def n_params(config: ModelConfig) -> int:
    return sum(slot.size for slot in param_layout(config).values())


def init_state(config: ModelConfig, seed: int, scaler: FeatureScaler | None = None) -> ModelState:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    layout = param_layout(config)
    params = np.zeros(n_params(config))
    for slot in layout.values():
        if slot.fan is None:
            continue
        limit = math.sqrt(6.0 / sum(slot.fan))
        params[slot.offset : slot.offset + slot.size] = rng.uniform(-limit, limit, slot.size)
    return ModelState(params=params, config=config, scaler=scaler)


def fit_scaler(features: Iterable[MelSpectrogram]) -> FeatureScaler:
    """Per-mel-bin mean and standard deviation over every frame of `features`."""
    frames = np.concatenate([m.frames for m in features], axis=0)
    if frames.size == 0:
        raise ValueError("cannot fit a scaler on zero frames")
    std = np.maximum(frames.std(axis=0), SCALER_STD_FLOOR)
    return FeatureScaler(mean=frames.mean(axis=0), std=std)


# forward -------------------------------------------------------------------------


class _Params:
    """Named views into the watched flat parameter tensor."""

    def __init__(self, flat: Tensor, layout: dict[str, ParamSlot]) -> None:
        self.flat = flat
        self.layout = layout

    def __getitem__(self, name: str) -> Tensor:
        slot = self.layout[name]
        return self.flat[slot.offset : slot.offset + slot.size].reshape(slot.shape)


def _conv_block(x: Tensor, p: _Params, config: ModelConfig, i: int) -> Tensor:
    c_out = config.channels[i]
    y = conv2d(x, p[f"conv{i}.w"], p[f"conv{i}.b"])
    if config.activation == Activation.GLU:
        y = y[:, :c_out] * y[:, c_out:].sigmoid()
    else:
        gate = (y.transpose(0, 2, 3, 1) @ p[f"gate{i}.w"] + p[f"gate{i}.b"]).sigmoid()
        y = y * gate.transpose(0, 3, 1, 2)
    return avg_pool2d(y, _time_pool(config, i), 2)


def _gru(seq: Tensor, p: _Params, prefix: str, hidden: int, reverse: bool) -> Tensor:
    """(B, T', D) -> (B, T', H) gated recurrent layer in one direction."""
    b, t_out, _ = seq.shape
    projected = seq @ p[f"{prefix}.wx"] + p[f"{prefix}.b"]
    wh = p[f"{prefix}.wh"]
    w_zr, w_n = wh[:, : 2 * hidden], wh[:, 2 * hidden :]
    h = lift(np.zeros((b, hidden)), seq.tape)
    outputs: list[Tensor] = [None] * t_out
    steps = range(t_out - 1, -1, -1) if reverse else range(t_out)
    for t in steps:
        x_t = projected[:, t]
        zr = (x_t[:, : 2 * hidden] + h @ w_zr).sigmoid()
        z, r = zr[:, :hidden], zr[:, hidden:]
        n = (x_t[:, 2 * hidden :] + (r * h) @ w_n).tanh()
        h = (1.0 - z) * n + z * h
        outputs[t] = h
    return stack(outputs, axis=1)


def forward_batch(
    flat: Tensor, config: ModelConfig, features: np.ndarray, scaler: FeatureScaler | None = None
) -> tuple[Tensor, Tensor]:
    """Strong (B, T', C) and weak (B, C) predictions for a (B, T, K) feature batch.

    Raises:
        ValueError: If K differs from the configured mel count or T is not a
            multiple of the pool factor.
    """
    if features.ndim != 3 or features.shape[2] != config.n_mels:
        raise ValueError(
            f"expected features of shape (B, T, {config.n_mels}), got {features.shape}"
        )
    if features.shape[1] % config.pool_factor:
        raise ValueError(
            f"T={features.shape[1]} is not a multiple of pool_factor={config.pool_factor}"
        )
    if flat.shape != (n_params(config),):
        raise ValueError(f"parameter vector has {flat.shape[0]} entries, need {n_params(config)}")

    p = _Params(flat, param_layout(config))
    x = scaler.apply(features) if scaler is not None else features
    h = flat.tape.constant(x[:, None, :, :])
    for i in range(config.conv_blocks):
        h = _conv_block(h, p, config, i)

    b, c, t_out, f = h.shape
    seq = h.transpose(0, 2, 1, 3).reshape(b, t_out, c * f)
    hidden = config.recurrent_hidden
    both = concat(
        [
            _gru(seq, p, "gru_fwd", hidden, reverse=False),
            _gru(seq, p, "gru_bwd", hidden, reverse=True),
        ],
        axis=2,
    )

    strong = (both @ p["strong.w"] + p["strong.b"]).sigmoid()
    if config.pooling_head == PoolingHead.ATTENTION:
        weights = softmax(both @ p["attention.w"] + p["attention.b"], axis=1)
        weak = (strong * weights).sum(axis=1)
    else:
        weak = strong.mean(axis=1)
    return strong, weak


@dataclass
class ForwardPass:
    """Predictions of one recorded forward pass plus the tape to differentiate it."""

    prediction: Prediction
    tape: Tape
    strong: Tensor
    weak: Tensor


def forward(state: ModelState, m: MelSpectrogram) -> ForwardPass:
    """Recorded forward pass for one clip."""
    tape = Tape()
    flat = tape.watch(state.params)
    strong, weak = forward_batch(flat, state.config, m.frames[None], state.scaler)
    prediction = Prediction(strong=strong.value[0], weak=weak.value[0])
    return ForwardPass(prediction=prediction, tape=tape, strong=strong, weak=weak)


def predict(
    state: ModelState, features: Sequence[MelSpectrogram], batch_size: int = 16
) -> list[Prediction]:
    """Unrecorded inference over many clips."""
    predictions: list[Prediction] = []
    for start in range(0, len(features), batch_size):
        chunk = np.stack([m.frames for m in features[start : start + batch_size]])
        tape = Tape(record=False)
        strong, weak = forward_batch(tape.watch(state.params), state.config, chunk, state.scaler)
        predictions.extend(
            Prediction(strong=s, weak=w) for s, w in zip(strong.value, weak.value)
        )
    return predictions


# optimizer -----------------------------------------------------------------------


def check_finite(values: np.ndarray, what: str) -> None:
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise NumericalError(
            f"{what} has {bad.size} non-finite entries; first at index {int(bad[0])}"
        )


def adam_step(state: ModelState, grad: np.ndarray, lr: float, t: int | None = None) -> ModelState:
    """One bias-corrected Adam update; moments travel with the returned state.

    Raises:
        NumericalError: If `grad` holds a NaN or infinity.
    """
    if grad.shape != state.params.shape:
        raise ValueError(f"gradient shape {grad.shape} != parameter shape {state.params.shape}")
    check_finite(grad, "gradient")

    moments = state.adam or AdamMoments(np.zeros_like(state.params), np.zeros_like(state.params))
    step = moments.t + 1 if t is None else t
    m = ADAM_BETA1 * moments.m + (1.0 - ADAM_BETA1) * grad
    v = ADAM_BETA2 * moments.v + (1.0 - ADAM_BETA2) * grad**2
    m_hat = m / (1.0 - ADAM_BETA1**step)
    v_hat = v / (1.0 - ADAM_BETA2**step)
    params = state.params - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return ModelState(
        params=params,
        config=state.config,
        scaler=state.scaler,
        adam=AdamMoments(m=m, v=v, t=step),
    )
