"""Reverse-mode autodiff core: tensors, the op tape, and registered primitives.

Tensors wrap a dense row-major numpy array plus an optional gradient slot.
Every primitive below records itself on the active :class:`Tape` (define-by-run,
one tape per forward pass) together with a backward rule; ``backward`` replays
the tape in reverse and accumulates d(loss)/d(leaf) into every requires-grad
leaf. Gradient accumulation is additive and explicit: callers zero grads
themselves between steps.

Training and inference run in float32 by default; the :func:`precision`
context switches new tensors to float64, which gradient-check tests use so
finite-difference tolerances are meaningful.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np


class AutodiffError(Exception):
    pass


class ShapeError(AutodiffError):
    """Operand shapes (or dtypes) do not satisfy an op's contract."""


class ContractError(AutodiffError):
    """An op precondition was violated (empty input, non-scalar loss, ...)."""


class GraphError(AutodiffError):
    """The requested backward pass does not correspond to the tape."""


class NumericError(AutodiffError):
    """A non-finite value appeared where the contract forbids one."""


_DEFAULT_DTYPE = np.float32


def default_dtype():
    return _DEFAULT_DTYPE


@contextmanager
def precision(dtype):
    """Temporarily change the dtype used for newly created tensors.

    ``dtype`` is ``"float32"``/``"float64"`` or the numpy type. Only the
    gradient-check tests should need float64.
    """
    global _DEFAULT_DTYPE
    prev = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DEFAULT_DTYPE = prev


class Tensor:
    """Dense n-dimensional float array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype in (
                np.float32,
                np.float64,
            ) else _DEFAULT_DTYPE
        self.data = np.ascontiguousarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g: np.ndarray):
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad = self.grad + g

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # convenience operators; all delegate to the strict primitives below
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return scale_shift(self, 1.0, float(other))

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return scale_shift(self, 1.0, -float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


class TapeEntry:
    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op: str, inputs: tuple, output: Tensor, backward_fn: Callable):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of primitive applications for one forward pass.

    Entries are appended in execution order, so every op's inputs appear
    earlier on the tape or are leaves; ``backward`` relies on that order.
    Use as a context manager: ops executed inside record themselves here.
    """

    def __init__(self):
        self.entries: list[TapeEntry] = []
        self.produced: set[int] = set()

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPE_STACK.pop()
        return False

    def record(self, op: str, inputs: tuple, output: Tensor, backward_fn: Callable):
        self.entries.append(TapeEntry(op, inputs, output, backward_fn))
        self.produced.add(id(output))

    def __len__(self):
        return len(self.entries)


_TAPE_STACK: list[Tape] = []


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


# Registry of primitive op names; the gradient-check suite iterates this to
# guarantee every registered op has a finite-difference-verified backward rule.
REGISTERED_OPS: dict[str, str] = {}


def _register(name: str, doc: str):
    REGISTERED_OPS[name] = doc


def _record(op: str, inputs: tuple, out_data: np.ndarray, backward_fn: Callable) -> Tensor:
    requires = any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.requires_grad = requires
    out.grad = None
    tape = active_tape()
    if tape is not None and requires:
        tape.record(op, inputs, out, backward_fn)
    return out


def _check_same_shape(op: str, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: operand shapes differ: {a.shape} vs {b.shape}")
    if a.dtype != b.dtype:
        raise ShapeError(f"{op}: operand dtypes differ: {a.dtype} vs {b.dtype}")


# ---------------------------------------------------------------------------
# pointwise family

_register("add", "elementwise a + b")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    return _record("add", (a, b), a.data + b.data, lambda g: (g, g))


_register("sub", "elementwise a - b")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)
    return _record("sub", (a, b), a.data - b.data, lambda g: (g, -g))


_register("mul", "elementwise a * b")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _record("mul", (a, b), ad * bd, lambda g: (g * bd, g * ad))


_register("scale", "x * c for a python scalar c")


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _record("scale", (x,), x.data * x.dtype.type(c), lambda g: (g * c,))


_register("scale_shift", "x * c + s for python scalars (affine by constants)")


def scale_shift(x: Tensor, c: float, s: float) -> Tensor:
    c, s = float(c), float(s)
    dt = x.dtype.type
    return _record("scale_shift", (x,), x.data * dt(c) + dt(s), lambda g: (g * c,))


_register("relu", "max(x, 0); derivative 0 at the tie x == 0")


def relu(x: Tensor) -> Tensor:
    xd = x.data
    return _record("relu", (x,), np.maximum(xd, 0), lambda g: (g * (xd > 0),))


_register("sigmoid", "logistic function")


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _record("sigmoid", (x,), out, lambda g: (g * out * (1.0 - out),))


_register("tanh", "hyperbolic tangent")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _record("tanh", (x,), out, lambda g: (g * (1.0 - out * out),))


# ---------------------------------------------------------------------------
# linear algebra / structure

_register("matmul", "2-D matrix product")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    if a.dtype != b.dtype:
        raise ShapeError(f"matmul: operand dtypes differ: {a.dtype} vs {b.dtype}")
    ad, bd = a.data, b.data

    def bw(g):
        return g @ bd.T, ad.T @ g

    return _record("matmul", (a, b), ad @ bd, bw)


_register("add_bias", "x[B,N] + b[N], broadcast over rows")


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    if x.data.ndim != 2 or b.data.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ShapeError(f"add_bias: incompatible shapes {x.shape} + {b.shape}")
    return _record("add_bias", (x, b), x.data + b.data, lambda g: (g, g.sum(axis=0)))


_register("concat", "concatenate along one axis")


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ContractError("concat: empty tensor list")
    ndim = tensors[0].data.ndim
    if not 0 <= axis < ndim:
        raise ShapeError(f"concat: axis {axis} out of range for ndim {ndim}")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.data.ndim != ndim or any(
            i != axis and t.shape[i] != ref[i] for i in range(ndim)
        ):
            raise ShapeError(f"concat: incompatible shapes {ref} vs {t.shape} on axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        sl = [slice(None)] * ndim
        outs = []
        for i in range(len(sizes)):
            sl[axis] = slice(offsets[i], offsets[i + 1])
            outs.append(g[tuple(sl)])
        return tuple(outs)

    return _record("concat", tensors, np.concatenate([t.data for t in tensors], axis=axis), bw)


_register("narrow", "contiguous slice of `length` elements along one axis")


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    ndim = x.data.ndim
    if not 0 <= axis < ndim:
        raise ShapeError(f"narrow: axis {axis} out of range for ndim {ndim}")
    if start < 0 or length < 0 or start + length > x.shape[axis]:
        raise ShapeError(f"narrow: window [{start}, {start + length}) exceeds axis size {x.shape[axis]}")
    sl = [slice(None)] * ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    xshape = x.shape

    def bw(g):
        gx = np.zeros(xshape, dtype=g.dtype)
        gx[sl] = g
        return (gx,)

    return _record("narrow", (x,), np.ascontiguousarray(x.data[sl]), bw)


_register("reshape", "view with a new shape of equal size")


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if math.prod(shape) != x.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    old = x.shape
    return _record("reshape", (x,), x.data.reshape(shape), lambda g: (g.reshape(old),))


_register("sum_all", "sum of all elements, scalar output")


def sum_all(x: Tensor) -> Tensor:
    xshape, dt = x.shape, x.dtype

    def bw(g):
        return (np.full(xshape, g.reshape(()), dtype=dt),)

    return _record("sum_all", (x,), np.asarray(x.data.sum(), dtype=dt), bw)


_register("gather_rows", "row gather W[idx]; gradient scatters into the gathered rows")


def gather_rows(w: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"gather_rows: indices must be 1-D, got shape {idx.shape}")
    if w.data.ndim != 2:
        raise ShapeError(f"gather_rows: table must be 2-D, got shape {w.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= w.shape[0]):
        bad = idx[(idx < 0) | (idx >= w.shape[0])][0]
        raise ContractError(f"gather_rows: index {bad} out of range [0, {w.shape[0]})")
    wshape, dt = w.shape, w.dtype

    def bw(g):
        gw = np.zeros(wshape, dtype=dt)
        np.add.at(gw, idx, g)
        return (gw,)

    return _record("gather_rows", (w,), w.data[idx], bw)


# ---------------------------------------------------------------------------
# loss

_register("mse_loss", "mean squared error, scalar output")


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    _check_same_shape("mse_loss", pred, target)
    n = pred.size
    if n == 0:
        raise ContractError("mse_loss: empty input")
    diff = pred.data - target.data

    def bw(g):
        gd = (2.0 / n) * diff * g.reshape(())
        return gd, -gd

    out = np.asarray(np.mean(diff * diff), dtype=pred.dtype)
    return _record("mse_loss", (pred, target), out, bw)


# ---------------------------------------------------------------------------
# sequence / normalization primitives

_register("causal_conv1d", "left-padded dilated causal convolution over (B, C, T)")


def causal_conv1d(x: Tensor, kernel: Tensor, bias: Tensor | None, dilation: int = 1) -> Tensor:
    """y[b,o,t] = sum_{c,i} K[o,c,i] * x[b,c,t - d*i]  (+ bias[o]), zero left-pad.

    Output length equals input length; output at time t never touches inputs
    after t, which the causality tests verify exactly.
    """
    if x.data.ndim != 3 or kernel.data.ndim != 3:
        raise ShapeError(f"causal_conv1d: need x(B,C,T) and kernel(O,C,K), got {x.shape} and {kernel.shape}")
    bsz, cin, tlen = x.shape
    cout, kin, k = kernel.shape
    if kin != cin:
        raise ShapeError(f"causal_conv1d: channel mismatch: x has {cin}, kernel expects {kin}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"causal_conv1d: bias shape {bias.shape} != ({cout},)")
    if dilation < 1:
        raise ContractError(f"causal_conv1d: dilation must be >= 1, got {dilation}")
    d = int(dilation)
    pad = (k - 1) * d
    xp = np.concatenate(
        [np.zeros((bsz, cin, pad), dtype=x.dtype), x.data], axis=2
    ) if pad else x.data
    kd = kernel.data
    out = np.zeros((bsz, cout, tlen), dtype=x.dtype)
    for i in range(k):
        lo = pad - i * d
        seg = xp[:, :, lo : lo + tlen]
        # (O,C) . (B,C,T) -> (O,B,T)
        out += np.tensordot(kd[:, :, i], seg, axes=([1], [1])).transpose(1, 0, 2)
    if bias is not None:
        out += bias.data[None, :, None]

    def bw(g):
        gk = np.empty_like(kd)
        gxp = np.zeros_like(xp)
        for i in range(k):
            lo = pad - i * d
            seg = xp[:, :, lo : lo + tlen]
            gk[:, :, i] = np.tensordot(g, seg, axes=([0, 2], [0, 2]))
            gxp[:, :, lo : lo + tlen] += np.tensordot(
                kd[:, :, i], g, axes=([0], [1])
            ).transpose(1, 0, 2)
        gx = gxp[:, :, pad:] if pad else gxp
        if bias is not None:
            return gx, gk, g.sum(axis=(0, 2))
        return gx, gk

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return _record("causal_conv1d", inputs, out, bw)


def _bn_axes(ndim: int) -> tuple:
    # channel axis is 1; reduce over everything else
    return tuple(i for i in range(ndim) if i != 1)


def _bn_expand(v: np.ndarray, ndim: int) -> np.ndarray:
    shape = [1] * ndim
    shape[1] = v.shape[0]
    return v.reshape(shape)


_register("batch_norm_train", "per-channel batch normalization using batch statistics")


def batch_norm_train(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    if x.data.ndim < 2:
        raise ShapeError(f"batch_norm_train: need at least 2-D input, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm_train: gamma/beta must be ({c},), got {gamma.shape}/{beta.shape}")
    axes = _bn_axes(x.data.ndim)
    ndim = x.data.ndim
    mu = x.data.mean(axis=axes)
    var = x.data.var(axis=axes)  # biased, used for normalization
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - _bn_expand(mu, ndim)) * _bn_expand(inv, ndim)
    out = xhat * _bn_expand(gamma.data, ndim) + _bn_expand(beta.data, ndim)
    m = x.size // c
    gdat = gamma.data

    def bw(g):
        dbeta = g.sum(axis=axes)
        dgamma = (g * xhat).sum(axis=axes)
        gm = g.mean(axis=axes)
        gxm = (g * xhat).mean(axis=axes)
        dx = (
            _bn_expand(gdat * inv, ndim)
            * (g - _bn_expand(gm, ndim) - xhat * _bn_expand(gxm, ndim))
        )
        return dx.astype(g.dtype, copy=False), dgamma, dbeta

    del m
    return _record("batch_norm_train", (x, gamma, beta), out, bw)


_register("batch_norm_eval", "per-channel affine map from frozen running statistics")


def batch_norm_eval(
    x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray, running_var: np.ndarray, eps: float = 1e-5
) -> Tensor:
    if x.data.ndim < 2:
        raise ShapeError(f"batch_norm_eval: need at least 2-D input, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm_eval: gamma/beta must be ({c},), got {gamma.shape}/{beta.shape}")
    axes = _bn_axes(x.data.ndim)
    ndim = x.data.ndim
    inv = 1.0 / np.sqrt(running_var + eps)
    xhat = (x.data - _bn_expand(running_mean, ndim)) * _bn_expand(inv, ndim)
    out = xhat * _bn_expand(gamma.data, ndim) + _bn_expand(beta.data, ndim)
    gdat = gamma.data

    def bw(g):
        return (
            g * _bn_expand(gdat * inv, ndim),
            (g * xhat).sum(axis=axes),
            g.sum(axis=axes),
        )

    return _record("batch_norm_eval", (x, gamma, beta), out, bw)


_register("dropout_mask", "multiply by a fixed 0/(1-p)-scaled mask (inverted dropout)")


def dropout_mask(x: Tensor, mask: np.ndarray) -> Tensor:
    if mask.shape != x.shape:
        raise ShapeError(f"dropout_mask: mask shape {mask.shape} != input shape {x.shape}")
    m = mask.astype(x.dtype, copy=False)
    return _record("dropout_mask", (x,), x.data * m, lambda g: (g * m,))


# ---------------------------------------------------------------------------
# backward

def backward(loss: Tensor, tape: Tape) -> dict:
    """Accumulate d(loss)/d(leaf) into every requires-grad leaf used on `tape`.

    Returns a map {leaf tensor: gradient array}. Intermediate (non-leaf)
    gradients are discarded. Calling this twice on the same tape doubles the
    stored ``.grad`` of every leaf.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    idx = None
    for i in range(len(tape.entries) - 1, -1, -1):
        if tape.entries[i].output is loss:
            idx = i
            break
    if idx is None:
        raise GraphError("backward: loss tensor was not produced on this tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for entry in reversed(tape.entries[: idx + 1]):
        g = grads.pop(id(entry.output), None)
        if g is None:
            continue
        in_grads = entry.backward_fn(g)
        for t, gi in zip(entry.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if key not in tape.produced:
                leaves[key] = t

    result = {}
    for key, t in leaves.items():
        g = np.asarray(grads[key], dtype=t.dtype)
        t.accumulate_grad(g)
        result[t] = g
    return result


# ---------------------------------------------------------------------------
# finite-difference oracle

def finite_difference_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Max over coordinates of |analytic - numeric| / max(1, |numeric|).

    ``f`` must be a deterministic scalar-valued tensor function (dropout and
    batch norm in eval mode). Central differences with step ``eps``.
    """
    base = np.asarray(x.data, dtype=np.float64)

    def feval(arr: np.ndarray) -> float:
        out = f(Tensor(arr, dtype=arr.dtype))
        if out.data.size != 1:
            raise ContractError(f"finite_difference_check: f must return a scalar, got shape {out.shape}")
        v = float(out.data.reshape(()))
        if not math.isfinite(v):
            raise NumericError("finite_difference_check: f produced a non-finite value")
        return v

    xg = Tensor(base.copy(), requires_grad=True, dtype=base.dtype)
    with Tape() as tape:
        loss = f(xg)
    if loss.data.size != 1:
        raise ContractError(f"finite_difference_check: f must return a scalar, got shape {loss.shape}")
    if not np.isfinite(loss.data).all():
        raise NumericError("finite_difference_check: f produced a non-finite value")
    backward(loss, tape)
    analytic = np.zeros_like(base) if xg.grad is None else np.asarray(xg.grad, dtype=np.float64)

    worst = 0.0
    flat = base.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        pert = base.copy().reshape(-1)
        pert[i] = orig + eps
        fp = feval(pert.reshape(base.shape))
        pert[i] = orig - eps
        fm = feval(pert.reshape(base.shape))
        numeric = (fp - fm) / (2.0 * eps)
        err = abs(analytic.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
        if err > worst:
            worst = err
    return worst
