"""Reverse-mode automatic differentiation over dense float64 tensors.

A ``Tape`` is an explicit recording scope: operations executed while a tape
is open append nodes to it, and ``tape_backward`` (or ``Tape.backward``)
replays the nodes in reverse to accumulate gradients into every reachable
leaf.  Outside a tape scope the same operations run as plain numpy compute
and produce detached tensors.  Tapes are consumed by backward and release
their buffers afterwards.

Complex spectra are carried as real/imaginary tensor pairs (``ComplexGrid``)
so the whole spectral path stays inside the real-valued tape.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "AutodiffError",
    "ShapeError",
    "DetachedTensorError",
    "TapeConsumedError",
    "Tensor",
    "Tape",
    "ComplexGrid",
    "tape_backward",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "matmul",
    "relu",
    "power",
    "sum_all",
    "mean_all",
    "concat",
    "reshape",
    "expand_leading",
    "take_nodes",
    "scatter_nodes",
    "mode_matmul",
    "fft2_forward",
    "fft2_inverse",
]


class AutodiffError(Exception):
    """Base class for tape and tensor errors."""


class ShapeError(AutodiffError):
    """Raised when operand shapes are incompatible; names the offending op."""

    def __init__(self, op: str, *shapes: tuple) -> None:
        super().__init__(f"{op}: incompatible shapes {' vs '.join(map(str, shapes))}")
        self.op = op
        self.shapes = shapes


class DetachedTensorError(AutodiffError):
    """Raised when backward is requested from a tensor no tape recorded."""


class TapeConsumedError(AutodiffError):
    """Raised when a tape is used after backward consumed it."""


_scope = threading.local()


def _active_tape() -> "Tape | None":
    return getattr(_scope, "tape", None)


class Tensor:
    """Dense float64 array with an optional gradient slot.

    ``trainable`` marks optimizer-owned leaves; gradients accumulate into
    ``grad`` during backward.  Tensors produced inside an open tape remember
    it so backward can verify reachability.
    """

    __slots__ = ("data", "grad", "trainable", "tape", "_needs", "name", "__weakref__")

    def __init__(self, data, trainable: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.trainable = bool(trainable)
        self.tape: Tape | None = None
        self._needs = self.trainable
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        tag = self.name or ("param" if self.trainable else "tensor")
        return f"Tensor({tag}, shape={self.data.shape})"

    # arithmetic sugar; scalars and ndarrays are promoted to constants
    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __neg__(self):
        return mul(self, as_tensor(-1.0))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise AutodiffError("tensor/tensor division is not a tape primitive")
        return mul(self, as_tensor(1.0 / float(other)))

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, n):
        return power(self, n)

    def __getitem__(self, key):
        return _getitem(self, key)


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


@dataclass
class ComplexGrid:
    """Complex-valued grid split into real/imaginary tensors.

    Used for Fourier spectra and for the learnable complex multipliers of
    the spectral path; both parts ride the same tape.
    """

    re: Tensor
    im: Tensor

    @property
    def shape(self) -> tuple:
        return self.re.shape

    def to_complex(self) -> np.ndarray:
        return self.re.data + 1j * self.im.data


class _Node:
    __slots__ = ("inputs", "outputs", "backward")

    def __init__(self, inputs, outputs, backward):
        self.inputs = inputs
        self.outputs = outputs
        self.backward = backward


class Tape:
    """Explicit recording scope for reverse-mode differentiation.

    Usage::

        with Tape() as tape:
            loss = ...          # ops executed here are recorded
        tape.backward(loss)      # consumes the tape

    Nested scopes are not supported; one tape is active per thread.
    """

    def __init__(self) -> None:
        self._nodes: list[_Node] = []
        self._open = False
        self._consumed = False

    def __enter__(self) -> "Tape":
        if _active_tape() is not None:
            raise AutodiffError("a tape scope is already open on this thread")
        if self._consumed:
            raise TapeConsumedError("tape was already consumed by backward")
        self._open = True
        _scope.tape = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self._open = False
        _scope.tape = None

    def _record(self, inputs, outputs, backward) -> None:
        self._nodes.append(_Node(tuple(inputs), tuple(outputs), backward))

    def backward(self, root: Tensor) -> None:
        """Accumulate gradients of the scalar ``root`` into every leaf.

        The tape is consumed: node buffers are released and a second
        backward raises ``TapeConsumedError``.
        """
        if self._consumed:
            raise TapeConsumedError("tape was already consumed by backward")
        if root.tape is not self:
            raise DetachedTensorError(
                "backward root was not recorded on this tape (detached tensor)"
            )
        if root.data.size != 1:
            raise AutodiffError(f"backward root must be scalar, got shape {root.shape}")
        root.grad = np.ones_like(root.data)
        for node in reversed(self._nodes):
            grads_out = [o.grad for o in node.outputs]
            if all(g is None for g in grads_out):
                continue
            grads_out = [
                g if g is not None else np.zeros_like(o.data)
                for g, o in zip(grads_out, node.outputs)
            ]
            grads_in = node.backward(*grads_out)
            for tensor, g in zip(node.inputs, grads_in):
                if g is None or not tensor._needs:
                    continue
                if g.shape != tensor.data.shape:
                    raise ShapeError("backward", g.shape, tensor.data.shape)
                if tensor.grad is None:
                    tensor.grad = g.copy() if g.base is not None else g
                else:
                    tensor.grad = tensor.grad + g
        self._nodes = []
        self._consumed = True


def tape_backward(root: Tensor) -> None:
    """Run backward from ``root`` on the tape that recorded it."""
    if root.tape is None:
        raise DetachedTensorError("tensor is detached; no tape recorded it")
    root.tape.backward(root)


def _emit(op: str, inputs: Sequence[Tensor], data_out, backward) -> Tensor:
    """Wrap forward results, recording a node when a tape is open."""
    # numpy collapses 0-d arithmetic to scalars; promote back to arrays
    outs = data_out if isinstance(data_out, tuple) else (np.asarray(data_out),)
    tensors = tuple(Tensor(a) for a in outs)
    tape = _active_tape()
    if tape is not None and any(t._needs or t.tape is tape for t in inputs):
        for t in tensors:
            t.tape = tape
            t._needs = True
        tape._record(inputs, tensors, backward)
    return tensors[0] if len(tensors) == 1 else tensors


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError("add", a.shape, b.shape) from None

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _emit("add", (a, b), out, backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data - b.data
    except ValueError:
        raise ShapeError("sub", a.shape, b.shape) from None

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _emit("sub", (a, b), out, backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError("mul", a.shape, b.shape) from None

    def backward(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _emit("mul", (a, b), out, backward)


def matmul(x: Tensor, w: Tensor) -> Tensor:
    """Contract the last axis of ``x`` with the first axis of ``w`` [m, k]."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError("matmul", x.shape, w.shape)
    out = x.data @ w.data

    def backward(g):
        gx = g @ w.data.T
        lead = int(np.prod(x.data.shape[:-1], dtype=np.int64)) if x.ndim > 1 else 1
        x2 = x.data.reshape(lead, x.data.shape[-1])
        g2 = g.reshape(lead, w.data.shape[1])
        return gx, x2.T @ g2

    return _emit("matmul", (x, w), out, backward)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)

    def backward(g):
        return (g * (x.data > 0.0),)

    return _emit("relu", (x,), out, backward)


def power(x: Tensor, n: int) -> Tensor:
    """Elementwise integer power, n >= 1."""
    n = int(n)
    if n < 1:
        raise AutodiffError("power: exponent must be a positive integer")
    out = x.data**n

    def backward(g):
        return (g * n * x.data ** (n - 1),)

    return _emit("power", (x,), out, backward)


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum())

    def backward(g):
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return _emit("sum", (x,), out, backward)


def mean_all(x: Tensor) -> Tensor:
    size = x.data.size
    out = np.asarray(x.data.mean())

    def backward(g):
        return (np.broadcast_to(g / size, x.data.shape).copy(),)

    return _emit("mean", (x,), out, backward)


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        raise ShapeError("concat", *[p.shape for p in parts]) from None
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _emit("concat", tuple(parts), out, backward)


def _getitem(x: Tensor, key) -> Tensor:
    out = x.data[key]
    if not isinstance(out, np.ndarray):
        out = np.asarray(out)

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[key] = g
        return (gx,)

    return _emit("getitem", (x,), out.copy(), backward)


def reshape(x: Tensor, shape: tuple) -> Tensor:
    """View ``x`` with a new shape of the same size."""
    old = x.data.shape
    out = x.data.reshape(shape).copy()

    def backward(g):
        return (g.reshape(old),)

    return _emit("reshape", (x,), out, backward)


def expand_leading(x: Tensor, n: int) -> Tensor:
    """Tile a new leading axis of length ``n`` (gradient sums over it)."""
    out = np.broadcast_to(x.data[None, ...], (n,) + x.data.shape).copy()

    def backward(g):
        return (g.sum(axis=0),)

    return _emit("expand_leading", (x,), out, backward)


def take_nodes(x: Tensor, idx: np.ndarray) -> Tensor:
    """Select rows ``idx`` (unique indices) along axis -2 of [..., P, C]."""
    idx = np.asarray(idx, dtype=np.int64)
    out = x.data[..., idx, :].copy()

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[..., idx, :] = g
        return (gx,)

    return _emit("take_nodes", (x,), out, backward)


def scatter_nodes(x: Tensor, idx: np.ndarray, length: int) -> Tensor:
    """Place rows of [..., K, C] at positions ``idx`` in a zero [..., P, C]."""
    idx = np.asarray(idx, dtype=np.int64)
    shape = x.data.shape[:-2] + (length, x.data.shape[-1])
    out = np.zeros(shape, dtype=np.float64)
    out[..., idx, :] = x.data

    def backward(g):
        return (g[..., idx, :].copy(),)

    return _emit("scatter_nodes", (x,), out, backward)


def mode_matmul(xre: Tensor, xim: Tensor, wre: Tensor, wim: Tensor) -> tuple[Tensor, Tensor]:
    """Per-mode complex channel mixing.

    Inputs [..., K, C] against weights [K, C, O]; returns the real and
    imaginary parts of ``x @ w`` mode by mode.
    """
    if xre.shape != xim.shape or wre.shape != wim.shape:
        raise ShapeError("mode_matmul", xre.shape, xim.shape, wre.shape, wim.shape)
    if wre.ndim != 3 or xre.shape[-1] != wre.shape[1] or xre.shape[-2] != wre.shape[0]:
        raise ShapeError("mode_matmul", xre.shape, wre.shape)
    lead = xre.shape[:-2]
    k, c = xre.shape[-2], xre.shape[-1]
    o = wre.shape[-1]
    # complex batched matmul over the mode axis (one zgemm per mode)
    xc = (xre.data + 1j * xim.data).reshape(-1, k, c).transpose(1, 0, 2)
    wc = wre.data + 1j * wim.data
    yc = (xc @ wc).transpose(1, 0, 2).reshape(lead + (k, o))
    yre = np.ascontiguousarray(yc.real)
    yim = np.ascontiguousarray(yc.imag)

    def backward(gre, gim):
        gc = (gre + 1j * gim).reshape(-1, k, o).transpose(1, 0, 2)
        gx = (gc @ wc.conj().transpose(0, 2, 1)).transpose(1, 0, 2)
        gx = gx.reshape(lead + (k, c))
        gw = xc.conj().transpose(0, 2, 1) @ gc
        gxre = np.ascontiguousarray(gx.real)
        gxim = np.ascontiguousarray(gx.imag)
        gwre = np.ascontiguousarray(gw.real)
        gwim = np.ascontiguousarray(gw.imag)
        return gxre, gxim, gwre, gwim

    return _emit("mode_matmul", (xre, xim, wre, wim), (yre, yim), backward)


def fft2_forward(field: Tensor) -> ComplexGrid:
    """2D discrete Fourier transform over the two grid axes of [..., s, s, c].

    Unnormalized transform (the zero mode of a constant field of ones on an
    s-by-s grid equals s*s).  The spectrum is returned as a real/imaginary
    pair riding the same tape as ``field``.
    """
    if field.ndim < 3:
        raise ShapeError("fft2_forward", field.shape)
    spec = np.fft.fft2(field.data, axes=(-3, -2))
    scale = field.data.shape[-3] * field.data.shape[-2]

    def backward(gre, gim):
        g = np.fft.ifft2(gre + 1j * gim, axes=(-3, -2))
        return (np.ascontiguousarray(g.real) * scale,)

    out = _emit("fft2_forward", (field,), (np.ascontiguousarray(spec.real), np.ascontiguousarray(spec.imag)), backward)
    return ComplexGrid(re=out[0], im=out[1])


def fft2_inverse(grid: ComplexGrid) -> Tensor:
    """Real part of the inverse 2D transform of a full spectrum."""
    re, im = grid.re, grid.im
    if re.shape != im.shape or re.ndim < 3:
        raise ShapeError("fft2_inverse", re.shape, im.shape)
    out = np.fft.ifft2(re.data + 1j * im.data, axes=(-3, -2))
    scale = re.data.shape[-3] * re.data.shape[-2]

    def backward(g):
        spec = np.fft.fft2(g, axes=(-3, -2))
        return (
            np.ascontiguousarray(spec.real) / scale,
            np.ascontiguousarray(spec.imag) / scale,
        )

    return _emit("fft2_inverse", (re, im), np.ascontiguousarray(out.real), backward)


def custom_op(
    name: str,
    inputs: Sequence[Tensor],
    forward: np.ndarray,
    backward: Callable,
):
    """Record an externally computed forward with a caller-supplied backward.

    Lets composite layers (spline activations, fused kernels) appear as a
    single tape node; ``backward`` receives the output gradient(s) and must
    return one gradient per input (or None).
    """
    return _emit(name, tuple(inputs), forward, backward)
