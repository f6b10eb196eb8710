"""Dense tensors with reverse-mode automatic differentiation.

Storage is a numpy array; gradients are tracked by attaching a :class:`Node`
to every tensor produced from at least one ``requires_grad`` input. Calling
:meth:`Tensor.backward` on a scalar builds a :class:`Tape` (the reachable
nodes in topological order), replays it in reverse and then releases it, so
a second backward over the same graph is rejected.

Elementwise binary ops only broadcast a scalar or an exactly matching shape.
Structured broadcasts that the model needs (bias add, frame masks) are
separate primitives with their own backward rules.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, NumericError, ShapeError, TapeError

MASK_FILL = -1e9

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@dataclass
class Node:
    op: str
    inputs: tuple
    backward: Callable[[np.ndarray], tuple]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node", "_released", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind not in "fc":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: Node | None = None
        self._released = False
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))

    def check_finite(self, what: str = "tensor") -> "Tensor":
        if not self.is_finite():
            raise NumericError(f"non-finite values in {what}")
        return self

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def backward(self, params: Sequence["Tensor"] | None = None) -> None:
        backward(self, params)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other, like=self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None):
        return reduce_sum(self, axis)

    def mean(self, axis=None):
        return reduce_mean(self, axis)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, op: str, inputs: tuple, bwd: Callable) -> Tensor:
    out = Tensor(data)
    if is_grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node = Node(op, inputs, bwd)
    return out


class Tape:
    """Topologically ordered record of the graph reachable from a root."""

    def __init__(self, root: Tensor):
        self.root = root
        self.order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                self.order.append(t)
                continue
            if id(t) in seen:
                continue
            if t._released:
                raise TapeError("graph already consumed by a previous backward pass")
            seen.add(id(t))
            stack.append((t, True))
            if t._node is not None:
                for inp in reversed(t._node.inputs):
                    if inp.requires_grad and id(inp) not in seen:
                        stack.append((inp, False))

    def backward(self, seed: np.ndarray) -> None:
        grads: dict[int, np.ndarray] = {id(self.root): seed}
        for t in reversed(self.order):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if t._node is None:
                t.grad = g.copy() if t.grad is None else t.grad + g
                continue
            in_grads = t._node.backward(g)
            for inp, ig in zip(t._node.inputs, in_grads):
                if ig is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + ig
                else:
                    grads[key] = ig
        for t in self.order:
            if t._node is not None:
                t._node = None
                t._released = True


def backward(loss: Tensor, params: Sequence[Tensor] | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Parameters listed in ``params`` that are not on any path to ``loss`` end
    up with an all-zero gradient instead of ``None``.
    """
    if loss.size != 1:
        raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._released:
        raise TapeError("graph already consumed by a previous backward pass")
    if loss.requires_grad:
        Tape(loss).backward(np.ones_like(loss.data))
    if params is not None:
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)


# ---------------------------------------------------------------------------
# elementwise


def _binary_operands(a, b):
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        raise TypeError("at least one operand must be a Tensor")
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape} (scalar or exact shape only)")
    return a, b


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape)


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, "add", (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, "sub", (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    ad, bd = a.data, b.data

    def bwd(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(ad * bd, "mul", (a, b), bwd)


def scale(x: Tensor, c: float) -> Tensor:
    return _make(x.data * c, "scale", (x,), lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    # subgradient at exactly 0 is 0
    pos = x.data > 0
    return _make(np.where(pos, x.data, 0).astype(x.dtype), "relu", (x,), lambda g: (g * pos,))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _make(y, "exp", (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise NumericError("log of non-positive value")
    xd = x.data
    return _make(np.log(xd), "log", (x,), lambda g: (g / xd,))


def abs_(x: Tensor) -> Tensor:
    sgn = np.sign(x.data)
    return _make(np.abs(x.data), "abs", (x,), lambda g: (g * sgn,))


def square(x: Tensor) -> Tensor:
    xd = x.data
    return _make(xd * xd, "square", (x,), lambda g: (2.0 * g * xd,))


def softplus(x: Tensor) -> Tensor:
    xd = x.data
    y = np.logaddexp(0.0, xd).astype(x.dtype)
    sig = 0.5 * (1.0 + np.tanh(0.5 * xd))
    return _make(y, "softplus", (x,), lambda g: (g * sig,))


def elementwise(op: str, *args) -> Tensor:
    """Dispatch by name: add, mul, scale, relu, exp, log (plus abs, square, softplus)."""
    table = {
        "add": add,
        "sub": sub,
        "mul": mul,
        "scale": scale,
        "relu": relu,
        "exp": exp,
        "log": log,
        "abs": abs_,
        "square": square,
        "softplus": softplus,
    }
    try:
        fn = table[op]
    except KeyError:
        raise ConfigError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _make(x.data.reshape(shape), "reshape", (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), "transpose", (x,), lambda g: (np.transpose(g, inv),))


def swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def getitem(x: Tensor, index) -> Tensor:
    shape, dtype = x.shape, x.dtype

    def bwd(g):
        out = np.zeros(shape, dtype=dtype)
        np.add.at(out, index, g)
        return (out,)

    return _make(np.array(x.data[index]), "getitem", (x,), bwd)


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = tuple(xs)
    sizes = [t.shape[axis] for t in xs]
    splits = np.cumsum(sizes)[:-1]
    return _make(
        np.concatenate([t.data for t in xs], axis=axis),
        "concat",
        xs,
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` for ``[..., m, k] @ [k, n]`` or equal leading batch dims."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands need at least 2 dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bwd(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if bd.ndim == 2:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _make(ad @ bd, "matmul", (a, b), bwd)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a ``[C]`` vector along the trailing axis of ``[..., C]``."""
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"bias {b.shape} does not match trailing axis of {x.shape}")
    lead = tuple(range(x.ndim - 1))
    return _make(x.data + b.data, "add_bias", (x, b), lambda g: (g, g.sum(axis=lead)))


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w)
    return y if b is None else add_bias(y, b)


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Same-padded temporal cross-correlation.

    ``x`` is ``[..., T, Cin]``, ``w`` is ``[K, Cin, Cout]`` with odd ``K``;
    ``y[t] = b + sum_k x[t + k - K//2] @ w[k]`` with zeros outside ``[0, T)``.
    """
    K, cin, cout = w.shape
    if K % 2 == 0:
        raise ConfigError(f"conv1d kernel size must be odd, got {K}")
    if x.shape[-1] != cin:
        raise ShapeError(f"conv1d input channels {x.shape[-1]} != kernel {cin}")
    lead = x.shape[:-2]
    T = x.shape[-2]
    half = K // 2
    x3 = x.data.reshape((-1, T, cin))
    wd = w.data
    if K == 1:
        cols = x3.reshape(-1, cin)
    else:
        xp = np.pad(x3, ((0, 0), (half, half), (0, 0)))
        # [B, T, Cin, K] -> [B, T, K, Cin]
        win = sliding_window_view(xp, K, axis=1)
        cols = np.ascontiguousarray(np.swapaxes(win, -1, -2)).reshape(-1, K * cin)
    w2 = wd.reshape(K * cin, cout)
    y = (cols @ w2).reshape(lead + (T, cout))
    if b is not None:
        y = y + b.data
    inputs = (x, w) if b is None else (x, w, b)

    def bwd(g):
        g2 = g.reshape(-1, cout)
        gw = (cols.T @ g2).reshape(K, cin, cout)
        gcols = (g2 @ w2.T).reshape(-1, T, K, cin)
        if K == 1:
            gx = gcols[:, :, 0, :]
        else:
            gxp = np.zeros((gcols.shape[0], T + 2 * half, cin), dtype=g.dtype)
            for k in range(K):
                gxp[:, k : k + T, :] += gcols[:, :, k, :]
            gx = gxp[:, half : half + T, :]
        gx = gx.reshape(x.shape)
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _make(y, "conv1d", inputs, bwd)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the trailing (channel) axis, then scale and shift."""
    if eps <= 0:
        raise ConfigError("layer_norm eps must be positive")
    C = x.shape[-1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(f"layer_norm affine params must be [{C}]")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gamma.data + beta.data
    lead = tuple(range(x.ndim - 1))

    def bwd(g):
        gxhat = g * gamma.data
        gx = inv * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make(y.astype(xd.dtype), "layer_norm", (x, gamma, beta), bwd)


def softmax_rows(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis; ``mask`` (broadcastable bool) marks valid entries.

    Masked logits are pushed to ``MASK_FILL`` before normalizing and their
    probabilities are then set to exactly zero.
    """
    xd = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), xd.shape)
        if not np.all(mask.any(axis=-1)):
            raise ShapeError("softmax_rows: a row has no valid entry")
        xd = np.where(mask, xd, MASK_FILL)
    z = xd - xd.max(axis=-1, keepdims=True)
    e = np.exp(z)
    if mask is not None:
        e = e * mask
    y = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y.astype(x.dtype), "softmax_rows", (x,), bwd)


# ---------------------------------------------------------------------------
# gathers, masks, reductions


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of ``[V, C]`` for integer ``ids`` of any shape."""
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        raise TypeError("embedding ids must be integers")
    V = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= V):
        raise IndexError(f"embedding id out of range [0, {V})")
    shape, dtype = table.shape, table.dtype

    def bwd(g):
        out = np.zeros(shape, dtype=dtype)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (out,)

    return _make(table.data[ids], "embedding", (table,), bwd)


def masked_zero(x: Tensor, mask: np.ndarray) -> Tensor:
    """Zero the frames of ``[..., T, C]`` where the ``[..., T]`` mask is False."""
    m = np.asarray(mask, dtype=bool)
    if m.shape != x.shape[: m.ndim] or m.ndim != x.ndim - 1:
        raise ShapeError(f"mask {m.shape} does not cover leading axes of {x.shape}")
    mf = m[..., None].astype(x.dtype)
    return _make(x.data * mf, "masked_zero", (x,), lambda g: (g * mf,))


def reduce_sum(x: Tensor, axis=None) -> Tensor:
    shape = x.shape
    if axis is not None and not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"invalid axis {axis} for shape {shape}")
    if axis is not None and shape[axis] == 0:
        raise ShapeError("reduction over an empty axis")

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make(np.asarray(x.data.sum(axis=axis)), "sum", (x,), bwd)


def reduce_mean(x: Tensor, axis=None) -> Tensor:
    n = x.size if axis is None else (x.shape[axis] if x.ndim else 1)
    if n == 0:
        raise ShapeError("reduction over an empty axis")
    return scale(reduce_sum(x, axis), 1.0 / n)


def reduce(op: str, x: Tensor, axis=None) -> Tensor:
    if op == "sum":
        return reduce_sum(x, axis)
    if op == "mean":
        return reduce_mean(x, axis)
    raise ConfigError(f"unknown reduction {op!r}")


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ConfigError("training-mode dropout needs a seeded rng")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return _make(x.data * keep, "dropout", (x,), lambda g: (g * keep,))
