"""Minimal reverse-mode differentiation over numpy arrays.

A `Tape` records every tensor produced from a watched parameter vector in
creation order, which is already a topological order, so `backward` is a
single reversed sweep. Tensors built without a recording parent are plain
constants and never reach the tape.
"""

from collections.abc import Callable, Sequence

import numpy as np

from src.errors import TapeConsumedError

GradFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Wengert list for one forward pass (one watched parameter vector)."""

    def __init__(self, record: bool = True) -> None:
        self.record = record
        self._nodes: list["Tensor"] = []
        self._watched: "Tensor | None" = None
        self._consumed = False

    def watch(self, params: np.ndarray) -> "Tensor":
        if self._watched is not None:
            raise ValueError("a tape watches exactly one parameter vector")
        leaf = Tensor(np.asarray(params, dtype=np.float64), self, requires_grad=self.record)
        self._watched = leaf
        return leaf

    def constant(self, value) -> "Tensor":
        return Tensor(np.asarray(value, dtype=np.float64), self)

    @property
    def consumed(self) -> bool:
        return self._consumed

    def _push(self, node: "Tensor") -> None:
        self._nodes.append(node)


class Tensor:
    """Array value plus the local rule that maps an output gradient to parent gradients."""

    # ndarray <op> Tensor defers to the Tensor's reflected operator.
    __array_ufunc__ = None

    def __init__(
        self,
        value: np.ndarray,
        tape: Tape | None = None,
        parents: tuple["Tensor", ...] = (),
        grad_fn: GradFn | None = None,
        requires_grad: bool = False,
    ) -> None:
        self.value = value
        self.tape = tape
        self.parents = parents
        self.grad_fn = grad_fn
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def item(self) -> float:
        return float(self.value)

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic -------------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = lift(other, self.tape)
        return _op(
            self.value + other.value,
            (self, other),
            lambda g: (_unbroadcast(g, self.shape), _unbroadcast(g, other.shape)),
        )

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return _op(-self.value, (self,), lambda g: (-g,))

    def __sub__(self, other) -> "Tensor":
        return self + (-lift(other, self.tape))

    def __rsub__(self, other) -> "Tensor":
        return lift(other, self.tape) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = lift(other, self.tape)
        a, b = self.value, other.value
        return _op(
            a * b,
            (self, other),
            lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
        )

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return self * other**-1.0
        return self * (1.0 / other)

    def __pow__(self, exponent: float) -> "Tensor":
        a = self.value
        return _op(a**exponent, (self,), lambda g: (g * exponent * a ** (exponent - 1),))

    def __matmul__(self, other) -> "Tensor":
        other = lift(other, self.tape)
        a, b = self.value, other.value
        return _op(
            a @ b,
            (self, other),
            lambda g: (
                _unbroadcast(g @ np.swapaxes(b, -1, -2), a.shape),
                _unbroadcast(np.swapaxes(a, -1, -2) @ g, b.shape),
            ),
        )

    # shape --------------------------------------------------------------------

    def __getitem__(self, index) -> "Tensor":
        shape = self.shape
        basic = not any(isinstance(i, (np.ndarray, list)) for i in _as_tuple(index))

        def grad(g):
            full = np.zeros(shape)
            if basic:
                full[index] += g
            else:
                np.add.at(full, index, g)
            return (full,)

        return _op(self.value[index], (self,), grad)

    def reshape(self, *shape) -> "Tensor":
        original = self.shape
        return _op(self.value.reshape(*shape), (self,), lambda g: (g.reshape(original),))

    def transpose(self, *axes) -> "Tensor":
        inverse = np.argsort(axes)
        return _op(self.value.transpose(axes), (self,), lambda g: (g.transpose(inverse),))

    # reductions ---------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def grad(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape),)

        return _op(self.value.sum(axis=axis, keepdims=keepdims), (self,), grad)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.value.size
        else:
            count = np.prod([self.shape[a] for a in _as_tuple(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # elementwise --------------------------------------------------------------

    def sigmoid(self) -> "Tensor":
        out = _stable_sigmoid(self.value)
        return _op(out, (self,), lambda g: (g * out * (1.0 - out),))

    def tanh(self) -> "Tensor":
        out = np.tanh(self.value)
        return _op(out, (self,), lambda g: (g * (1.0 - out**2),))

    def exp(self) -> "Tensor":
        out = np.exp(self.value)
        return _op(out, (self,), lambda g: (g * out,))

    def log(self) -> "Tensor":
        a = self.value
        return _op(np.log(a), (self,), lambda g: (g / a,))

    def clip(self, low: float, high: float) -> "Tensor":
        a = self.value
        inside = (a >= low) & (a <= high)
        return _op(np.clip(a, low, high), (self,), lambda g: (g * inside,))


def lift(value, tape: Tape | None = None) -> Tensor:
    """Wrap arrays and scalars as constant tensors."""
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64), tape)


def _as_tuple(index) -> tuple:
    return index if isinstance(index, tuple) else (index,)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _op(value: np.ndarray, parents: tuple[Tensor, ...], grad_fn: GradFn) -> Tensor:
    tape = next((p.tape for p in parents if p.requires_grad), None)
    if tape is None:
        return Tensor(value, next((p.tape for p in parents if p.tape is not None), None))
    node = Tensor(value, tape, parents, grad_fn, requires_grad=True)
    tape._push(node)
    return node


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _op(
        np.concatenate([t.value for t in tensors], axis=axis),
        tuple(tensors),
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return _op(
        np.stack([t.value for t in tensors], axis=axis),
        tuple(tensors),
        lambda g: tuple(np.moveaxis(g, axis, 0)),
    )


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.value - x.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    return _op(out, (x,), lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def conv2d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """3x3 'same' convolution of (B, C_in, T, F) with weight (C_out, C_in, 3, 3)."""
    b, c_in, t, f = x.shape
    c_out, c_w, kt, kf = weight.shape
    if c_w != c_in:
        raise ValueError(f"conv weight expects {c_w} input channels, got {c_in}")
    pt, pf = kt // 2, kf // 2
    padded = np.pad(x.value, ((0, 0), (0, 0), (pt, pt), (pf, pf)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (kt, kf), axis=(2, 3))
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(b * t * f, c_in * kt * kf)
    w2 = weight.value.reshape(c_out, -1)
    out = (cols @ w2.T).reshape(b, t, f, c_out).transpose(0, 3, 1, 2) + bias.value[
        None, :, None, None
    ]

    def grad(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(b * t * f, c_out)
        g_weight = (g2.T @ cols).reshape(weight.shape)
        g_bias = g2.sum(axis=0)
        g_cols = (g2 @ w2).reshape(b, t, f, c_in, kt, kf)
        g_padded = np.zeros_like(padded)
        for i in range(kt):
            for j in range(kf):
                g_padded[:, :, i : i + t, j : j + f] += g_cols[..., i, j].transpose(0, 3, 1, 2)
        return g_padded[:, :, pt : pt + t, pf : pf + f], g_weight, g_bias

    return _op(out, (x, weight, bias), grad)


def avg_pool2d(x: Tensor, pool_t: int, pool_f: int) -> Tensor:
    """Non-overlapping average pooling over the last two axes of (B, C, T, F)."""
    b, c, t, f = x.shape
    if t % pool_t or f % pool_f:
        raise ValueError(f"cannot pool ({t}, {f}) by ({pool_t}, {pool_f})")
    out = x.value.reshape(b, c, t // pool_t, pool_t, f // pool_f, pool_f).mean(axis=(3, 5))
    scale = 1.0 / (pool_t * pool_f)

    def grad(g):
        return (np.repeat(np.repeat(g, pool_t, axis=2), pool_f, axis=3) * scale,)

    return _op(out, (x,), grad)


def backward(tape: Tape, loss: Tensor, loss_grad: float = 1.0) -> np.ndarray:
    """Gradient of `loss_grad * loss` with respect to the tape's watched parameters.

    Raises:
        TapeConsumedError: If the tape already ran backward.
        ValueError: If the tape watches no parameters or the loss is not a scalar.
    """
    if tape.consumed:
        raise TapeConsumedError("tape was already consumed by a backward pass")
    if tape._watched is None:
        raise ValueError("tape watches no parameters")
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape._consumed = True

    watched = tape._watched
    if not loss.requires_grad:
        tape._nodes.clear()
        return np.zeros_like(watched.value)

    grads: dict[int, np.ndarray] = {id(loss): np.full(loss.shape, float(loss_grad))}
    for node in reversed(tape._nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        for parent, parent_grad in zip(node.parents, node.grad_fn(g)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + parent_grad
            else:
                grads[key] = np.array(parent_grad, dtype=np.float64)
    tape._nodes.clear()
    return grads.get(id(watched), np.zeros_like(watched.value))
