"""Dense n-dimensional tensors with reverse-mode automatic differentiation.

Values live in contiguous numpy buffers (float64 by default, float32 opt-in).
Gradients are computed by recording primitive ops on an explicit per-pass
:class:`Tape` and replaying it backwards.  The tape is a plain list, so the
topological order is simply the recording order and each op is visited exactly
once during the backward sweep.

A tape must stay on the thread that recorded it; tensors themselves may be
shared freely once constructed (the only sanctioned mutation is an explicit
in-place optimizer update on ``.data``).
"""

from __future__ import annotations

import itertools
import struct
import threading
from typing import BinaryIO, Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64

_SUPPORTED_DTYPES = (np.float32, np.float64)

_uid_counter = itertools.count()

_tls = threading.local()

# Finite-value validation of op outputs.  On by default; heavy inner loops can
# switch it off once they are trusted.
_finite_checks = True


def set_finite_checks(enabled: bool) -> bool:
    """Toggle per-op finite-output validation. Returns the previous setting."""
    global _finite_checks
    previous = _finite_checks
    _finite_checks = bool(enabled)
    return previous


class TapeError(RuntimeError):
    pass


class NonFiniteError(FloatingPointError):
    """Raised when an op produces (or backward encounters) NaN/Inf values."""


def _as_array(data, dtype=None) -> np.ndarray:
    if isinstance(data, Tensor):
        data = data.data
    arr = np.asarray(data)
    if dtype is None:
        dtype = arr.dtype if arr.dtype in _SUPPORTED_DTYPES else DEFAULT_DTYPE
    out = np.array(arr, dtype=dtype, order="C", copy=None)
    return out


class Tensor:
    """A dense float tensor, optionally tracked for gradients.

    ``grad`` holds the most recent gradient buffer assigned by
    :func:`backward` (same shape as ``data``), or ``None``.
    """

    __slots__ = ("data", "requires_grad", "grad", "uid")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.uid: int = next(_uid_counter)

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.item())

    def numpy(self) -> np.ndarray:
        """The underlying buffer (not a copy)."""
        return self.data

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=self.requires_grad)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        grad = ", grad" if self.grad is not None else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad}{grad})"

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_coerce(other, self), self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_coerce(other, self), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)


class TapeEntry:
    __slots__ = ("name", "inputs", "output", "vjp")

    def __init__(self, name: str, inputs: tuple[Tensor, ...], output: Tensor, vjp: Callable):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.vjp = vjp


class Tape:
    """Ordered record of the primitive ops of one forward pass."""

    def __init__(self):
        self.entries: list[TapeEntry] = []

    def __len__(self) -> int:
        return len(self.entries)

    def __enter__(self) -> "Tape":
        stack = getattr(_tls, "tapes", None)
        if stack is None:
            stack = _tls.tapes = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tls.tapes
        if not stack or stack[-1] is not self:
            raise TapeError("tape stack corrupted: exiting a tape that is not active")
        stack.pop()

    def clear(self) -> None:
        self.entries.clear()


def active_tape() -> Tape | None:
    stack = getattr(_tls, "tapes", None)
    return stack[-1] if stack else None


def apply_op(name: str, inputs: Sequence[Tensor], out_data: np.ndarray, vjp: Callable) -> Tensor:
    """Create the output tensor of a primitive op and record it if a tape is live.

    ``vjp(grad_out)`` must return one gradient array (or None) per input, each
    already reduced to the input's shape.
    """
    if _finite_checks and not np.all(np.isfinite(out_data)):
        raise NonFiniteError(f"non-finite values in output of op '{name}'")
    requires = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=requires)
    tape = active_tape()
    if tape is not None and requires:
        tape.entries.append(TapeEntry(name, tuple(inputs), out, vjp))
    return out


def backward(tape: Tape, seed: Tensor) -> dict[int, Tensor]:
    """Reverse sweep over ``tape``; returns ``{leaf uid: gradient}``.

    The seed multiplies into the output of the tape's last op and must match
    its shape.  Leaf tensors (graph inputs with ``requires_grad``) also get
    their ``.grad`` buffer assigned.  The sweep never mutates the tape, so
    running it twice gives identical results.
    """
    if not tape.entries:
        raise TapeError("backward on an empty tape")
    final = tape.entries[-1].output
    seed_arr = seed.data if isinstance(seed, Tensor) else np.asarray(seed, dtype=final.dtype)
    if seed_arr.shape != final.shape:
        raise ValueError(f"seed shape {seed_arr.shape} does not match output shape {final.shape}")

    grads: dict[int, np.ndarray] = {final.uid: seed_arr.astype(final.dtype, copy=True)}
    produced = {entry.output.uid for entry in tape.entries}

    for index in range(len(tape.entries) - 1, -1, -1):
        entry = tape.entries[index]
        gout = grads.pop(entry.output.uid, None)
        if gout is None:
            continue
        if not np.all(np.isfinite(gout)):
            raise NonFiniteError(f"non-finite gradient flowing into op {index} ('{entry.name}')")
        input_grads = entry.vjp(gout)
        for tensor, grad in zip(entry.inputs, input_grads):
            if grad is None or not tensor.requires_grad:
                continue
            acc = grads.get(tensor.uid)
            if acc is None:
                grads[tensor.uid] = np.array(grad, dtype=tensor.dtype, copy=True)
            else:
                acc += grad

    result: dict[int, Tensor] = {}
    seen: set[int] = set()
    for entry in tape.entries:
        for tensor in entry.inputs:
            if tensor.uid in seen or tensor.uid in produced or not tensor.requires_grad:
                continue
            seen.add(tensor.uid)
            grad = grads.get(tensor.uid)
            if grad is None:
                grad = np.zeros_like(tensor.data)
            tensor.grad = grad
            result[tensor.uid] = Tensor(grad)
    return result


# ---------------------------------------------------------------------------
# Broadcasting rules: same shape, scalar, or trailing-dim alignment where the
# result equals one operand's shape exactly.  Anything else must be explicit.
# ---------------------------------------------------------------------------


def _coerce(value, like: Tensor | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value), dtype=dtype)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    sa, sb = a.shape, b.shape
    if sa == sb:
        return sa
    if a.size == 1:
        return sb
    if b.size == 1:
        return sa
    try:
        out = np.broadcast_shapes(sa, sb)
    except ValueError:
        raise ValueError(f"{op}: shapes {sa} and {sb} are not broadcastable") from None
    if out != sa and out != sb:
        raise ValueError(
            f"{op}: broadcast of {sa} and {sb} would expand both operands; "
            "only scalar and trailing-dimension broadcasting is supported"
        )
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy trailing broadcast)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# Elementwise primitives
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a = _coerce(a)
    b = _coerce(b, a)
    _broadcast_shape(a, b, "add")

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return apply_op("add", (a, b), a.data + b.data, vjp)


def sub(a, b) -> Tensor:
    a = _coerce(a)
    b = _coerce(b, a)
    _broadcast_shape(a, b, "sub")

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return apply_op("sub", (a, b), a.data - b.data, vjp)


def mul(a, b) -> Tensor:
    a = _coerce(a)
    b = _coerce(b, a)
    _broadcast_shape(a, b, "mul")

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return apply_op("mul", (a, b), a.data * b.data, vjp)


def div(a, b) -> Tensor:
    a = _coerce(a)
    b = _coerce(b, a)
    _broadcast_shape(a, b, "div")

    def vjp(g):
        with np.errstate(all="ignore"):
            ga = _unbroadcast(g / b.data, a.shape)
            gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    with np.errstate(all="ignore"):
        out = a.data / b.data
    return apply_op("div", (a, b), out, vjp)


def neg(a: Tensor) -> Tensor:
    a = _coerce(a)
    return apply_op("neg", (a,), -a.data, lambda g: (-g,))


def power(a: Tensor, exponent: float) -> Tensor:
    a = _coerce(a)
    p = float(exponent)

    def vjp(g):
        with np.errstate(all="ignore"):
            return (g * p * a.data ** (p - 1.0),)

    with np.errstate(all="ignore"):
        out = a.data**p
    return apply_op("pow", (a,), out, vjp)


def exp(a: Tensor) -> Tensor:
    a = _coerce(a)
    with np.errstate(all="ignore"):
        out = np.exp(a.data)
    return apply_op("exp", (a,), out, lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    a = _coerce(a)
    with np.errstate(all="ignore"):
        out = np.log(a.data)
    return apply_op("log", (a,), out, lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    a = _coerce(a)
    with np.errstate(all="ignore"):
        out = np.sqrt(a.data)
    return apply_op("sqrt", (a,), out, lambda g: (g * 0.5 / out,))


def sin(a: Tensor) -> Tensor:
    a = _coerce(a)
    return apply_op("sin", (a,), np.sin(a.data), lambda g: (g * np.cos(a.data),))


def cos(a: Tensor) -> Tensor:
    a = _coerce(a)
    return apply_op("cos", (a,), np.cos(a.data), lambda g: (-g * np.sin(a.data),))


def tanh(a: Tensor) -> Tensor:
    a = _coerce(a)
    out = np.tanh(a.data)
    return apply_op("tanh", (a,), out, lambda g: (g * (1.0 - out * out),))


# ---------------------------------------------------------------------------
# Reductions, reshapes, linear algebra
# ---------------------------------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy() if g.ndim == 0 else np.full(a.shape, g),)
        axes = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return apply_op("sum", (a,), np.asarray(out), vjp)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    out = a.data.mean(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g) / count
        if axis is None:
            return (np.full(a.shape, g) if g.ndim == 0 else np.broadcast_to(g, a.shape).copy(),)
        axes = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return apply_op("mean", (a,), np.asarray(out), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dimensions differ ({a.shape} @ {b.shape})")

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return apply_op("matmul", (a, b), a.data @ b.data, vjp)


def reshape(a: Tensor, shape) -> Tensor:
    a = _coerce(a)
    shape = tuple(int(s) for s in shape)
    out = a.data.reshape(shape)
    return apply_op("reshape", (a,), out, lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    a = _coerce(a)
    if axes is None:
        axes = tuple(range(a.ndim - 1, -1, -1))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return apply_op("transpose", (a,), np.ascontiguousarray(a.data.transpose(axes)), lambda g: (g.transpose(inverse),))


def getitem(a: Tensor, index) -> Tensor:
    a = _coerce(a)
    out = a.data[index]

    def vjp(g):
        buf = np.zeros_like(a.data)
        np.add.at(buf, index, g)
        return (buf,)

    return apply_op("getitem", (a,), np.ascontiguousarray(out), vjp)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = [_coerce(t) for t in tensors]
    sizes = [t.shape[axis] for t in parts]
    out = np.concatenate([t.data for t in parts], axis=axis)
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(
            np.ascontiguousarray(np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis))
            for i in range(len(parts))
        )

    return apply_op("concat", tuple(parts), out, vjp)


def broadcast_to(a: Tensor, shape) -> Tensor:
    a = _coerce(a)
    shape = tuple(int(s) for s in shape)
    out = np.broadcast_to(a.data, shape).copy()
    return apply_op("broadcast_to", (a,), out, lambda g: (_unbroadcast(g, a.shape),))


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


def check_gradients(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5, eps: float = 1e-8) -> float:
    """Max relative error between autodiff and central finite differences.

    ``f`` maps a tensor to a tensor; non-scalar outputs are summed to a scalar
    objective before differencing so the full VJP of ``f`` is exercised with a
    ones upstream gradient.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    x = _coerce(x)
    probe = Tensor(x.data.copy(), requires_grad=True)
    with Tape() as tape:
        y = f(probe)
        objective = tsum(y) if y.size > 1 else y
    grads = backward(tape, Tensor(np.ones_like(objective.data)))
    analytic = grads[probe.uid].data.reshape(-1)

    def scalar_eval(values: np.ndarray) -> float:
        out = f(Tensor(values))
        total = float(out.data.sum())
        if not np.isfinite(total):
            raise NonFiniteError("objective is non-finite during finite differencing")
        return total

    flat = x.data.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + h
        upper = scalar_eval(bumped.reshape(x.shape))
        bumped[i] = flat[i] - h
        lower = scalar_eval(bumped.reshape(x.shape))
        central = (upper - lower) / (2.0 * h)
        worst = max(worst, abs(analytic[i] - central) / (abs(central) + eps))
    return worst


# ---------------------------------------------------------------------------
# Binary serialization: magic "TCT1", u32 rank, u32 extents, u8 dtype code,
# then raw little-endian values.
# ---------------------------------------------------------------------------

TENSOR_MAGIC = b"TCT1"

_DTYPE_TO_CODE = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
_CODE_TO_DTYPE = {code: dt for dt, code in _DTYPE_TO_CODE.items()}


def save_tensor(tensor: Tensor | np.ndarray, destination: str | BinaryIO) -> None:
    arr = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor)
    if arr.dtype not in _DTYPE_TO_CODE:
        raise ValueError(f"unsupported dtype for serialization: {arr.dtype}")
    if hasattr(destination, "write"):
        _write_tensor(destination, arr)
    else:
        with open(destination, "wb") as fh:
            _write_tensor(fh, arr)


def _write_tensor(fh: BinaryIO, arr: np.ndarray) -> None:
    fh.write(TENSOR_MAGIC)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(struct.pack("<B", _DTYPE_TO_CODE[arr.dtype]))
    fh.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def load_tensor(source: str | BinaryIO) -> Tensor:
    if hasattr(source, "read"):
        return Tensor(_read_tensor(source))
    with open(source, "rb") as fh:
        return Tensor(_read_tensor(fh))


def _read_tensor(fh: BinaryIO) -> np.ndarray:
    magic = fh.read(4)
    if magic != TENSOR_MAGIC:
        raise ValueError(f"bad tensor magic: {magic!r}")
    (rank,) = struct.unpack("<I", fh.read(4))
    shape = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
    (code,) = struct.unpack("<B", fh.read(1))
    if code not in _CODE_TO_DTYPE:
        raise ValueError(f"unknown dtype code {code}")
    dtype = _CODE_TO_DTYPE[code]
    count = int(np.prod(shape)) if shape else 1
    raw = fh.read(count * dtype.itemsize)
    if len(raw) != count * dtype.itemsize:
        raise ValueError("truncated tensor payload")
    arr = np.frombuffer(raw, dtype=dtype.newbyteorder("<")).astype(dtype).reshape(shape)
    return np.array(arr, dtype=dtype, order="C", copy=None)
