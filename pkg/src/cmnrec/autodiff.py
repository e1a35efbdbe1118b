"""Tape-based reverse-mode differentiation over dense float64 arrays.

A :class:`Tape` records primitive applications during one forward pass.
Tensors created off-tape are constants; any primitive with at least one
taped input records its output on that tape.  ``backward`` replays the tape
once in reverse and returns gradients for every leaf (zeros when the leaf
did not influence the loss).

Supported primitive kinds (see :data:`PRIMITIVES`)::

    matmul add subtract multiply divide concat slice stack reshape
    tanh sigmoid softplus softmax norm scale sum gather cross_entropy
"""
from __future__ import annotations

from typing import Callable, Dict, Iterable, Mapping, Optional, Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    pass


class NonFiniteError(ValueError):
    pass


class EmptyTargetsError(ValueError):
    pass


class Tensor:
    """Immutable float64 array, optionally recorded on a tape."""

    __slots__ = ("value", "tape", "node", "name")

    def __init__(self, value, name: Optional[str] = None, *, _check: bool = True):
        arr = np.asarray(value, dtype=DTYPE).view()
        if _check and not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite values in tensor {name or ''}".rstrip())
        arr.flags.writeable = False
        self.value = arr
        self.tape: Optional[Tape] = None
        self.node: Optional[int] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        taped = " taped" if self.tape is not None else ""
        return f"Tensor(shape={self.shape}{tag}{taped})"

    __hash__ = object.__hash__

    def __add__(self, other):
        return apply("add", self, other)

    def __radd__(self, other):
        return apply("add", other, self)

    def __sub__(self, other):
        return apply("subtract", self, other)

    def __rsub__(self, other):
        return apply("subtract", other, self)

    def __mul__(self, other):
        return apply("multiply", self, other)

    def __rmul__(self, other):
        return apply("multiply", other, self)

    def __truediv__(self, other):
        return apply("divide", self, other)

    def __matmul__(self, other):
        return apply("matmul", self, other)


class Tape:
    """Ordered record of primitive applications for a single forward pass."""

    def __init__(self):
        # per node: (input node ids, vjp) ; leaves carry vjp=None
        self._inputs: list = []
        self._vjps: list = []
        self._leaves: list = []

    def __len__(self) -> int:
        return len(self._vjps)

    def leaf(self, value, name: Optional[str] = None) -> Tensor:
        t = Tensor(value.value if isinstance(value, Tensor) else value, name)
        t.tape = self
        t.node = len(self._vjps)
        self._inputs.append(())
        self._vjps.append(None)
        self._leaves.append(t)
        return t

    def leaves(self) -> list:
        return list(self._leaves)

    def _record(self, out: Tensor, inputs: Sequence[Optional[int]], vjp) -> None:
        out.tape = self
        out.node = len(self._vjps)
        self._inputs.append(tuple(inputs))
        self._vjps.append(vjp)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# --- primitives -----------------------------------------------------------
# Each primitive takes input arrays (+ keyword attributes) and returns
# (output array, vjp) where vjp maps the output cotangent to a tuple of
# input cotangents.


def _matmul(a, b):
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    out = np.matmul(a, b)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b, -1, -2))
        gb = np.matmul(np.swapaxes(a, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return out, vjp


def _add(a, b):
    return a + b, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))


def _subtract(a, b):
    return a - b, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))


def _multiply(a, b):
    return a * b, lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape))


def _divide(a, b):
    out = a / b

    def vjp(g):
        gb = -g * out / b
        return _unbroadcast(g / b, a.shape), _unbroadcast(gb, b.shape)

    return out, vjp


def _concat(*xs):
    lead = xs[0].shape[:-1]
    for x in xs[1:]:
        if x.shape[:-1] != lead:
            raise ShapeError(f"concat: leading shapes differ {[x.shape for x in xs]}")
    out = np.concatenate(xs, axis=-1)
    bounds = np.cumsum([x.shape[-1] for x in xs])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=-1))

    return out, vjp


def _slice(x, start: int, stop: int, axis: int = -1):
    n = x.shape[axis]
    if not (0 <= start < stop <= n):
        raise ShapeError(f"slice: [{start}:{stop}] out of range for axis {axis} of shape {x.shape}")
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    out = x[index]

    def vjp(g):
        gx = np.zeros_like(x)
        gx[index] = g
        return (gx,)

    return out, vjp


def _stack(*xs, axis: int = 0):
    shapes = {x.shape for x in xs}
    if len(shapes) != 1:
        raise ShapeError(f"stack: shapes differ {[x.shape for x in xs]}")
    out = np.stack(xs, axis=axis)

    def vjp(g):
        return tuple(np.moveaxis(g, axis, 0))

    return out, vjp


def _reshape(x, shape):
    try:
        out = x.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} to {tuple(shape)}") from None
    return out, lambda g: (g.reshape(x.shape),)


def _tanh(x):
    y = np.tanh(x)
    return y, lambda g: (g * (1.0 - y * y),)


def _sigmoid(x):
    y = 0.5 * (1.0 + np.tanh(0.5 * x))
    return y, lambda g: (g * y * (1.0 - y),)


def _softplus(x):
    y = np.logaddexp(0.0, x)

    def vjp(g):
        return (g * 0.5 * (1.0 + np.tanh(0.5 * x)),)

    return y, vjp


def _softmax(x):
    if x.shape[-1] == 0:
        raise ShapeError("softmax: empty last axis")
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return y, vjp


def _norm(x, keepdims: bool = False):
    y = np.sqrt((x * x).sum(axis=-1, keepdims=True))

    def vjp(g):
        g = g if keepdims else g[..., None]
        # zero subgradient at the origin
        safe = np.where(y > 0.0, y, 1.0)
        return (np.where(y > 0.0, g * x / safe, 0.0),)

    return (y if keepdims else y[..., 0]), vjp


def _scale(x, factor: float):
    factor = float(factor)
    return x * factor, lambda g: (g * factor,)


def _sum(x, axis=None, keepdims: bool = False):
    out = x.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return out, vjp


def _gather(table, ids, padding_idx: Optional[int] = None):
    """Row lookup; rows at ``padding_idx`` read as zeros and get no gradient."""
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        raise ShapeError(f"gather: ids must be integers, got dtype {ids.dtype}")
    if table.ndim != 2:
        raise ShapeError(f"gather: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"gather: ids outside [0, {table.shape[0]}) for table {table.shape}")
    out = table[ids]
    if padding_idx is not None:
        out[ids == padding_idx] = 0.0

    def vjp(g):
        gt = np.zeros_like(table)
        np.add.at(gt, ids, g)
        if padding_idx is not None:
            gt[padding_idx] = 0.0
        return (gt,)

    return out, vjp


def _cross_entropy(logits, targets, mask=None):
    """Mean over unmasked positions of -log softmax(logits)[target]."""
    targets = np.asarray(targets)
    if logits.shape[:-1] != targets.shape:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    mask = np.ones(targets.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != targets.shape:
        raise ShapeError(f"cross_entropy: mask {mask.shape} vs targets {targets.shape}")
    count = int(mask.sum())
    if count == 0:
        raise EmptyTargetsError("cross_entropy: every target is masked")
    safe_t = np.where(mask, targets, 0)
    if safe_t.min() < 0 or safe_t.max() >= logits.shape[-1]:
        raise ShapeError(f"cross_entropy: target outside [0, {logits.shape[-1]})")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1))
    picked = np.take_along_axis(shifted, safe_t[..., None], axis=-1)[..., 0]
    loss = ((lse - picked) * mask).sum() / count

    def vjp(g):
        p = np.exp(shifted - lse[..., None])
        np.put_along_axis(p, safe_t[..., None], np.take_along_axis(p, safe_t[..., None], -1) - 1.0, -1)
        return (p * (mask[..., None] * (g / count)),)

    return np.asarray(loss), vjp


PRIMITIVES: Dict[str, Callable] = {
    "matmul": _matmul,
    "add": _add,
    "subtract": _subtract,
    "multiply": _multiply,
    "divide": _divide,
    "concat": _concat,
    "slice": _slice,
    "stack": _stack,
    "reshape": _reshape,
    "tanh": _tanh,
    "sigmoid": _sigmoid,
    "softplus": _softplus,
    "softmax": _softmax,
    "norm": _norm,
    "scale": _scale,
    "sum": _sum,
    "gather": _gather,
    "cross_entropy": _cross_entropy,
}


def apply(kind: str, *inputs, **attrs) -> Tensor:
    """Apply primitive ``kind`` to ``inputs``; records on the inputs' tape if any."""
    try:
        prim = PRIMITIVES[kind]
    except KeyError:
        raise ValueError(f"unknown primitive kind {kind!r}") from None
    tensors = [as_tensor(x) for x in inputs]
    tape = None
    for t in tensors:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ValueError(f"{kind}: inputs recorded on different tapes")
            tape = t.tape
    values = [t.value for t in tensors]
    try:
        out_value, vjp = prim(*values, **attrs)
    except (ShapeError, EmptyTargetsError):
        raise
    except ValueError as exc:
        shapes = ", ".join(str(v.shape) for v in values)
        raise ShapeError(f"{kind}: incompatible shapes {shapes} ({exc})") from None
    if not np.isfinite(out_value).all():
        raise NonFiniteError(f"{kind}: produced non-finite values")
    out = Tensor(out_value, _check=False)
    if tape is not None:
        tape._record(out, [t.node if t.tape is tape else None for t in tensors], vjp)
    return out


# convenience wrappers used throughout the model code
def matmul(a, b):
    return apply("matmul", a, b)


def concat(*xs):
    return apply("concat", *xs)


def slice_(x, start, stop, axis=-1):
    return apply("slice", x, start=start, stop=stop, axis=axis)


def stack(xs: Iterable, axis=0):
    return apply("stack", *xs, axis=axis)


def reshape(x, shape):
    return apply("reshape", x, shape=tuple(shape))


def tanh(x):
    return apply("tanh", x)


def sigmoid(x):
    return apply("sigmoid", x)


def softplus(x):
    return apply("softplus", x)


def softmax(x):
    return apply("softmax", x)


def norm(x, keepdims=False):
    return apply("norm", x, keepdims=keepdims)


def scale(x, factor):
    return apply("scale", x, factor=factor)


def sum_(x, axis=None, keepdims=False):
    return apply("sum", x, axis=axis, keepdims=keepdims)


def gather(table, ids, padding_idx=None):
    return apply("gather", table, ids=ids, padding_idx=padding_idx)


def cross_entropy(logits, targets, mask=None):
    return apply("cross_entropy", logits, targets=targets, mask=mask)


def backward(loss: Tensor, wrt: Optional[Sequence[Tensor]] = None) -> Dict[Tensor, np.ndarray]:
    """Reverse sweep from scalar ``loss``.

    Returns a map from tensor to gradient array.  By default every leaf of the
    tape is included; pass ``wrt`` to request specific (possibly intermediate)
    tensors instead.
    """
    if loss.tape is None:
        raise ValueError("backward: loss is not recorded on a tape")
    if loss.value.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    tape = loss.tape
    grads: list = [None] * len(tape._vjps)
    grads[loss.node] = np.ones_like(loss.value)
    targets = tape._leaves if wrt is None else list(wrt)
    keep = {t.node for t in targets if t.tape is tape}
    for node in range(loss.node, -1, -1):
        g = grads[node]
        vjp = tape._vjps[node]
        if g is None or vjp is None:
            continue
        if node not in keep:
            grads[node] = None
        for src, gi in zip(tape._inputs[node], vjp(g)):
            if src is None:
                continue
            if grads[src] is None:
                grads[src] = gi
            else:
                grads[src] = grads[src] + gi
    out = {}
    for t in targets:
        if t.tape is not tape:
            raise ValueError("backward: requested tensor is not on the loss tape")
        g = grads[t.node]
        out[t] = np.zeros_like(t.value) if g is None else np.asarray(g, dtype=DTYPE).reshape(t.shape)
    return out


def finite_difference_gradient(
    f: Callable[[Mapping[str, np.ndarray]], float],
    params: Mapping[str, np.ndarray],
    eps: float = 1e-5,
    coords: Optional[Mapping[str, Sequence[tuple]]] = None,
) -> Dict[str, np.ndarray]:
    """Central-difference gradient of scalar ``f`` at ``params``.

    ``coords`` optionally restricts evaluation to the listed multi-indices per
    parameter; unlisted entries are left as NaN in that case.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    work = {k: np.array(v, dtype=DTYPE) for k, v in params.items()}
    grads = {}
    for name, arr in work.items():
        if coords is None:
            g = np.zeros_like(arr)
            indices = list(np.ndindex(arr.shape))
        else:
            g = np.full_like(arr, np.nan)
            indices = coords.get(name, [])
        for idx in indices:
            orig = arr[idx]
            arr[idx] = orig + eps
            up = float(f(work))
            arr[idx] = orig - eps
            down = float(f(work))
            arr[idx] = orig
            g[idx] = (up - down) / (2.0 * eps)
        grads[name] = g
    return grads


def relative_error(analytic, numeric) -> float:
    """max |a - n| / max(1, |a|) elementwise."""
    a = np.asarray(analytic, dtype=DTYPE)
    n = np.asarray(numeric, dtype=DTYPE)
    return float(np.max(np.abs(a - n) / np.maximum(1.0, np.abs(a)), initial=0.0))
