"""Reverse-mode differentiable tensor engine.

Deliberately small: only the primitives the sequence model needs, recorded on
an explicit tape and swept exactly once per backward pass.  Arrays are plain
numpy; broadcasting is restricted to suffix alignment (a smaller operand's
shape must equal the trailing dims of the larger one), which covers adding a
bias or a positional table to a batched activation and nothing more exotic.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import ConfigError, ShapeError

_DEFAULT_DTYPE = np.dtype(np.float32)
_TAPE_STACK: list["Tape"] = []


def default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    """Set the dtype new tensors are created with (float32 or float64)."""
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ConfigError(f"unsupported default dtype {dt}; use float32 or float64")
    _DEFAULT_DTYPE = dt


@contextmanager
def using_dtype(dtype) -> Iterator[None]:
    """Temporarily switch the default dtype (used by 64-bit gradient checks)."""
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


class Tensor:
    """A numpy array plus a requires_grad flag and a grad slot."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype if dtype is not None else _DEFAULT_DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = requires_grad
        out.grad = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a 1-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


class _Entry:
    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op: str, inputs: tuple[Tensor, ...], output: Tensor,
                 backward_fn: Callable[[np.ndarray], tuple[np.ndarray | None, ...]]):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of primitive applications; entries are appended in
    execution order, so the list is topologically sorted by construction."""

    def __init__(self):
        self.entries: list[_Entry] = []
        self.last_backward_visits = 0

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self.entries)

    def backward(self, loss: Tensor, params: Sequence[Tensor] | None = None):
        return backward(self, loss, params)


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _finish(op: str, inputs: tuple[Tensor, ...], out_data: np.ndarray,
            backward_fn) -> Tensor:
    requires = any(t.requires_grad for t in inputs)
    out = Tensor._wrap(out_data, requires)
    tape = _active_tape()
    if tape is not None and requires:
        tape.entries.append(_Entry(op, inputs, out, backward_fn))
    return out


def backward(tape: Tape, loss: Tensor, params: Sequence[Tensor] | None = None):
    """Sweep the tape once in reverse, accumulating adjoints.

    Sets ``.grad`` on every requires_grad tensor reached from ``loss``.  When
    ``params`` is given, unreachable entries get a zero gradient and the list
    of gradients is returned in the same order.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    tape.last_backward_visits = 0
    for entry in reversed(tape.entries):
        out_grad = grads.pop(id(entry.output), None)
        if out_grad is None:
            continue
        tape.last_backward_visits += 1
        for tensor, g in zip(entry.inputs, entry.backward_fn(out_grad)):
            if g is None or not tensor.requires_grad:
                continue
            acc = grads.get(id(tensor))
            grads[id(tensor)] = g if acc is None else acc + g
    if params is None:
        for entry in tape.entries:
            for tensor in entry.inputs:
                if tensor.requires_grad and id(tensor) in grads:
                    tensor.grad = grads[id(tensor)]
        if id(loss) in grads:
            loss.grad = grads[id(loss)]
        return None
    out = []
    for p in params:
        g = grads.get(id(p))
        p.grad = g if g is not None else np.zeros_like(p.data)
        out.append(p.grad)
    return out


# ---------------------------------------------------------------------------
# shape helpers


def _suffix_broadcastable(sa: tuple[int, ...], sb: tuple[int, ...]) -> bool:
    if sa == sb:
        return True
    shorter, longer = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    return longer[len(longer) - len(shorter):] == shorter


def _unbroadcast(g: np.ndarray, target_shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == target_shape:
        return g
    lead = g.ndim - len(target_shape)
    return g.sum(axis=tuple(range(lead)))


def _check_elementwise(op: str, a: Tensor, b: Tensor) -> None:
    if not _suffix_broadcastable(a.shape, b.shape):
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not align "
                         "(suffix broadcast only)")


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2 or ad.shape[-1] != bd.shape[-2] \
            or not _suffix_broadcastable(ad.shape[:-2], bd.shape[:-2]):
        raise ShapeError(f"matmul: shapes {ad.shape} and {bd.shape} do not conform")
    out = ad @ bd

    def bwd(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _finish("matmul", (a, b), out, bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise("add", a, b)
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _finish("add", (a, b), out, bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise("sub", a, b)
    out = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _finish("sub", (a, b), out, bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise("mul", a, b)
    ad, bd = a.data, b.data
    out = ad * bd

    def bwd(g):
        return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)

    return _finish("mul", (a, b), out, bwd)


def scale(a: Tensor, factor: float) -> Tensor:
    c = float(factor)
    out = a.data * c

    def bwd(g):
        return (g * c,)

    return _finish("scale", (a,), out, bwd)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bwd(g):
        return (g * out * (1.0 - out),)

    return _finish("sigmoid", (a,), out, bwd)


def relu(a: Tensor) -> Tensor:
    x = a.data
    out = np.maximum(x, 0)

    def bwd(g):
        return (g * (x > 0),)

    return _finish("relu", (a,), out, bwd)


def softmax(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis.  ``mask`` is additive (0 for allowed
    positions, -inf for blocked ones) and broadcasts against the input;
    blocked positions get probability exactly 0.  Fully blocked rows
    produce all-zero rows rather than NaN.
    """
    z = a.data
    if mask is not None:
        m = np.asarray(mask, dtype=z.dtype)
        if not _suffix_broadcastable(z.shape, m.shape):
            raise ShapeError(f"softmax: mask shape {m.shape} does not align with {z.shape}")
        z = z + m
    zmax = np.max(z, axis=-1, keepdims=True)
    zmax = np.where(np.isfinite(zmax), zmax, 0.0)
    e = np.exp(z - zmax)
    denom = e.sum(axis=-1, keepdims=True)
    out = e / np.where(denom == 0, 1.0, denom)

    def bwd(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _finish("softmax", (a,), out, bwd)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    x = a.data
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias shapes {gain.shape}/{bias.shape} "
                         f"do not match last dim {d}")
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat = (x - mu) * inv
    out = gain.data * xhat + bias.data

    def bwd(g):
        dxhat = g * gain.data
        lead = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=lead)
        dbias = g.sum(axis=lead)
        dx = (dxhat - dxhat.mean(axis=-1, keepdims=True)
              - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)) * inv
        return dx, dgain, dbias

    return _finish("layer_norm", (a, gain, bias), out, bwd)


def gather(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row-gather: table (N, d), integer ids of any shape -> (*ids.shape, d)."""
    idx = np.asarray(ids)
    if idx.dtype.kind not in "iu":
        raise ShapeError(f"gather: ids must be integers, got dtype {idx.dtype}")
    if table.data.ndim != 2:
        raise ShapeError(f"gather: table must be 2-D, got shape {table.shape}")
    n = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ShapeError(f"gather: ids outside [0, {n}) "
                         f"(min {idx.min()}, max {idx.max()})")
    out = table.data[idx]

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _finish("gather", (table,), out, bwd)


def dropout(a: Tensor, p_drop: float, rng) -> Tensor:
    """Inverted dropout: zero with probability ``p_drop``, scale the rest by
    1/(1-p_drop).  ``rng`` is a numpy Generator or an integer seed; the same
    seed reproduces the same mask."""
    if not 0.0 <= p_drop < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p_drop}")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    keep = (gen.random(a.shape) >= p_drop).astype(a.dtype) / np.asarray(1.0 - p_drop, dtype=a.dtype)
    out = a.data * keep

    def bwd(g):
        return (g * keep,)

    return _finish("dropout", (a,), out, bwd)


def mean_square(a: Tensor) -> Tensor:
    x = a.data
    out = np.asarray((x ** 2).mean(), dtype=x.dtype)

    def bwd(g):
        return (g * 2.0 * x / x.size,)

    return _finish("mean_square", (a,), out, bwd)


def bce(pred: Tensor, labels: np.ndarray, mask: np.ndarray | None = None,
        eps: float = 1e-7) -> Tensor:
    """Mean binary cross-entropy over unmasked positions.

    Predictions are clamped into [eps, 1-eps]; positions where the clamp is
    active get zero gradient (the clamped value is locally constant).  With
    an all-zero mask the loss is defined as 0.
    """
    y = np.asarray(labels, dtype=pred.dtype)
    if y.shape != pred.shape:
        raise ShapeError(f"bce: labels shape {y.shape} != predictions shape {pred.shape}")
    if mask is None:
        m = np.ones_like(pred.data)
    else:
        m = np.asarray(mask, dtype=pred.dtype)
        if m.shape != pred.shape:
            raise ShapeError(f"bce: mask shape {m.shape} != predictions shape {pred.shape}")
    n = float(m.sum())
    if n == 0:
        out = np.asarray(0.0, dtype=pred.dtype)

        def bwd_zero(g):
            return (np.zeros_like(pred.data),)

        return _finish("bce", (pred,), out, bwd_zero)
    p = np.clip(pred.data, eps, 1.0 - eps)
    terms = y * np.log(p) + (1.0 - y) * np.log1p(-p)
    out = np.asarray(-(m * terms).sum() / n, dtype=pred.dtype)

    def bwd(g):
        inside = (pred.data > eps) & (pred.data < 1.0 - eps)
        return (g * m * inside * (p - y) / (p * (1.0 - p) * n),)

    return _finish("bce", (pred,), out, bwd)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ShapeError("concat: need at least one tensor")
    shapes = [t.shape for t in tensors]
    ref = list(shapes[0])
    ax = axis if axis >= 0 else len(ref) + axis
    for s in shapes[1:]:
        if len(s) != len(ref) or any(i != ax and s[i] != ref[i] for i in range(len(ref))):
            raise ShapeError(f"concat: incompatible shapes {shapes} along axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=ax)
    sizes = [s[ax] for s in shapes]
    offsets = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, offsets, axis=ax))

    return _finish("concat", tuple(tensors), out, bwd)


def reduce_sum(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum(), dtype=a.dtype)

    def bwd(g):
        return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),)

    return _finish("sum", (a,), out, bwd)


def transpose(a: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    if axes is None:
        if a.data.ndim < 2:
            raise ShapeError(f"transpose: need at least 2 dims, got shape {a.shape}")
        perm = tuple(range(a.data.ndim - 2)) + (a.data.ndim - 1, a.data.ndim - 2)
    else:
        perm = tuple(axes)
        if sorted(perm) != list(range(a.data.ndim)):
            raise ShapeError(f"transpose: axes {axes} is not a permutation for shape {a.shape}")
    out = a.data.transpose(perm)
    inv = tuple(np.argsort(perm))

    def bwd(g):
        return (g.transpose(inv),)

    return _finish("transpose", (a,), out, bwd)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from e

    def bwd(g):
        return (g.reshape(a.shape),)

    return _finish("reshape", (a,), out, bwd)


_PRIMITIVES: dict[str, Callable] = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "sigmoid": sigmoid,
    "relu": relu,
    "softmax": softmax,
    "layer_norm": layer_norm,
    "gather": gather,
    "dropout": dropout,
    "mean_square": mean_square,
    "bce": bce,
    "concat": concat,
    "sum": reduce_sum,
    "transpose": transpose,
    "reshape": reshape,
}


def apply_primitive(op_kind: str, *args, **kwargs) -> Tensor:
    """Dispatch a primitive by name (same functions as the module-level API)."""
    try:
        fn = _PRIMITIVES[op_kind]
    except KeyError:
        raise ConfigError(f"unknown primitive {op_kind!r}; "
                          f"known: {sorted(_PRIMITIVES)}") from None
    return fn(*args, **kwargs)
