"""N-dimensional tensors with reverse-mode automatic differentiation.

numpy holds the raw arrays; this module adds a gradient tape and the small
set of differentiable operations a capsule network needs: valid convolution,
broadcast batched matrix multiply, elementwise nonlinearities, softmax,
squash, vector norms and reductions.  Analytic gradients are verifiable
against central finite differences via :func:`grad_check`.

Conventions:
    * data is stored flat in row-major order inside a numpy array
    * tests run at float64, training may run at float32
    * a ``Tape`` is confined to one logical thread; ops record onto the
      currently active tape only when a gradient will be needed
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import as_strided

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "TapeError",
    "add",
    "sub",
    "mul",
    "matmul",
    "einsum2",
    "conv2d",
    "conv2d_reference",
    "relu",
    "sigmoid",
    "softmax",
    "squash",
    "vector_norm",
    "tensor_sum",
    "tensor_mean",
    "reshape",
    "transpose",
    "backward",
    "grad_check",
    "GradCheckReport",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class TapeError(RuntimeError):
    """Invalid tape usage: double backward, foreign loss, nested tapes."""


_active_tape = None


class Tape:
    """Ordered record of executed operations for one backward pass.

    Operations append themselves in execution order, so every entry's
    inputs precede it; a single reverse traversal therefore propagates
    gradients to every tensor that requires them.  A tape can be consumed
    by :meth:`backward` exactly once.
    """

    def __init__(self):
        self._entries = []  # (output tensor, backward closure)
        self._consumed = False

    def __enter__(self):
        global _active_tape
        if _active_tape is not None:
            raise TapeError("a tape is already active; tapes do not nest")
        _active_tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _active_tape
        _active_tape = None
        return False

    def __len__(self):
        return len(self._entries)

    def _record(self, out, backward_fn):
        out._tape = self
        self._entries.append((out, backward_fn))

    def backward(self, loss):
        """Populate ``grad`` of every contributing tensor with d(loss)/d(tensor)."""
        if self._consumed:
            raise TapeError("tape already consumed; build a fresh tape per step")
        if loss.data.ndim != 0:
            raise TapeError(f"loss must be a scalar, got shape {loss.shape}")
        if loss._tape is not self:
            raise TapeError("loss was not produced by operations recorded on this tape")
        self._consumed = True
        loss.grad = np.ones((), dtype=loss.data.dtype)
        for out, backward_fn in reversed(self._entries):
            if out.grad is not None:
                backward_fn(out.grad)


def backward(tape, loss):
    """Run the reverse pass for ``loss`` over ``tape``."""
    tape.backward(loss)


class Tensor:
    """A numpy array plus optional gradient and tape linkage."""

    __slots__ = ("data", "grad", "requires_grad", "_tape")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    # arithmetic sugar; scalars and arrays are lifted to constant tensors
    def __add__(self, other):
        return add(self, _lift(other, self.dtype))

    def __radd__(self, other):
        return add(_lift(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _lift(other, self.dtype))

    def __rsub__(self, other):
        return sub(_lift(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _lift(other, self.dtype))

    def __rmul__(self, other):
        return mul(_lift(other, self.dtype), self)

    def __neg__(self):
        return mul(self, _lift(-1.0, self.dtype))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not part of this op set")
        return mul(self, _lift(1.0 / other, self.dtype))

    def __pow__(self, exponent):
        return pow_const(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes if len(axes) > 1 else axes[0])

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def norm(self, axis=-1, keepdims=False, eps=1e-8):
        return vector_norm(self, axis=axis, keepdims=keepdims, eps=eps)


def _lift(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _accum(t, g, owned=False):
    # owned=True promises g is a freshly allocated array private to this
    # call, so the first accumulation can adopt it without copying
    if t.grad is None:
        if owned and g.dtype == t.data.dtype:
            t.grad = g
        else:
            t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape``, inverting numpy broadcasting."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _maybe_record(out, inputs, backward_fn):
    out.requires_grad = any(t.requires_grad for t in inputs)
    if out.requires_grad and _active_tape is not None:
        _active_tape._record(out, backward_fn)
    return out


# ---------------------------------------------------------------------------
# elementwise and structural operations
# ---------------------------------------------------------------------------


def add(a, b):
    out = Tensor(a.data + b.data)

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.shape))

    return _maybe_record(out, (a, b), bwd)


def sub(a, b):
    out = Tensor(a.data - b.data)

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g, b.shape))

    return _maybe_record(out, (a, b), bwd)


def mul(a, b):
    out = Tensor(a.data * b.data)

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape), owned=True)
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape), owned=True)

    return _maybe_record(out, (a, b), bwd)


def pow_const(x, exponent):
    if not isinstance(exponent, (int, float)):
        raise TypeError("exponent must be a python scalar")
    out = Tensor(x.data**exponent)

    def bwd(g):
        _accum(x, g * exponent * x.data ** (exponent - 1), owned=True)

    return _maybe_record(out, (x,), bwd)


def relu(x):
    out = Tensor(np.maximum(x.data, 0))

    def bwd(g):
        _accum(x, g * (x.data > 0), owned=True)

    return _maybe_record(out, (x,), bwd)


def sigmoid(x):
    # split by sign to avoid overflow in exp
    d = x.data
    y = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    out = Tensor(y.astype(d.dtype, copy=False))

    def bwd(g):
        _accum(x, g * out.data * (1.0 - out.data), owned=True)

    return _maybe_record(out, (x,), bwd)


def reshape(x, shape):
    out = Tensor(x.data.reshape(shape))

    def bwd(g):
        _accum(x, g.reshape(x.shape))

    return _maybe_record(out, (x,), bwd)


def transpose(x, axes):
    axes = tuple(axes)
    out = Tensor(x.data.transpose(axes))
    inverse = tuple(np.argsort(axes))

    def bwd(g):
        _accum(x, g.transpose(inverse))

    return _maybe_record(out, (x,), bwd)


def tensor_sum(x, axis=None, keepdims=False):
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims))

    def bwd(g):
        gg = g
        if not keepdims and axis is not None:
            gg = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(gg, x.shape))

    return _maybe_record(out, (x,), bwd)


def tensor_mean(x, axis=None, keepdims=False):
    out = Tensor(x.data.mean(axis=axis, keepdims=keepdims))
    factor = x.data.size / max(out.data.size, 1)

    def bwd(g):
        gg = g
        if not keepdims and axis is not None:
            gg = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(gg, x.shape) / factor)

    return _maybe_record(out, (x,), bwd)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a, b):
    """Batched matrix product over the trailing two axes.

    Leading axes broadcast (extent equal or 1), exactly numpy's ``matmul``
    semantics.  Differentiable in both arguments.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands need at least 2 dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"inner dimensions do not match: {a.shape} x {b.shape} "
            f"({a.shape[-1]} vs {b.shape[-2]})"
        )
    try:
        out = Tensor(np.matmul(a.data, b.data))
    except ValueError as exc:
        raise ShapeError(f"leading dimensions are not broadcastable: {a.shape} x {b.shape}") from exc

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(np.matmul(g, b.data.swapaxes(-1, -2)), a.shape), owned=True)
        if b.requires_grad:
            _accum(b, _unbroadcast(np.matmul(a.data.swapaxes(-1, -2), g), b.shape), owned=True)

    return _maybe_record(out, (a, b), bwd)


def einsum2(spec: str, a, b):
    """Differentiable two-operand einsum contraction.

    ``spec`` must name two inputs and an output ("ij,jk->ik" style) with
    no index repeated within one operand.  Contracting directly avoids
    materializing broadcast products, which matters for the routing sums.
    """
    try:
        lhs, out_idx = spec.split("->")
        a_idx, b_idx = lhs.split(",")
    except ValueError as exc:
        raise ValueError(f"spec must look like 'ab,bc->ac', got {spec!r}") from exc
    for idx in (a_idx, b_idx, out_idx):
        if len(set(idx)) != len(idx):
            raise ValueError(f"repeated index within one operand: {spec!r}")
    if not set(a_idx) <= set(out_idx) | set(b_idx) or not set(b_idx) <= set(out_idx) | set(a_idx):
        raise ValueError(f"every contracted index must appear in both operands: {spec!r}")

    out = Tensor(np.einsum(spec, a.data, b.data, optimize=True))

    def bwd(g):
        if a.requires_grad:
            ga = np.einsum(f"{out_idx},{b_idx}->{a_idx}", g, b.data, optimize=True)
            _accum(a, ga, owned=True)
        if b.requires_grad:
            gb = np.einsum(f"{out_idx},{a_idx}->{b_idx}", g, a.data, optimize=True)
            _accum(b, gb, owned=True)

    return _maybe_record(out, (a, b), bwd)


def _im2col(x, k, stride):
    """Unroll valid kxk windows into rows; feature order is (C, ki, kj)."""
    n, c, h, w = x.shape
    h_out = (h - k) // stride + 1
    w_out = (w - k) // stride + 1
    s0, s1, s2, s3 = x.strides
    windows = as_strided(
        x,
        shape=(n, c, h_out, w_out, k, k),
        strides=(s0, s1, s2 * stride, s3 * stride, s2, s3),
    )
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n, h_out * w_out, c * k * k)
    return cols, h_out, w_out


def _col2im(gcols, x_shape, k, stride, h_out, w_out):
    n, c, h, w = x_shape
    gx = np.zeros(x_shape, dtype=gcols.dtype)
    gwin = gcols.reshape(n, h_out, w_out, c, k, k)
    for i in range(k):
        for j in range(k):
            gx[:, :, i : i + stride * h_out : stride, j : j + stride * w_out : stride] += gwin[
                :, :, :, :, i, j
            ].transpose(0, 3, 1, 2)
    return gx


def conv2d(x, kernel, bias, stride=1):
    """Valid 2-D cross-correlation: x [N,C,H,W] * kernel [F,C,k,k] + bias [F].

    Output spatial extent is (H - k) // stride + 1 (windows that do not fit
    are dropped, matching the usual convolution-layer arithmetic).
    Implemented as an unrolled matrix product; ``conv2d_reference`` is the
    plain-loop equivalent kept for equivalence testing.
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernel, got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    f, ck, kh, kw = kernel.shape
    if kh != kw:
        raise ShapeError(f"only square kernels are supported, got {kh}x{kw}")
    if ck != c:
        raise ShapeError(f"kernel expects {ck} input channels, input has {c}")
    if bias.shape != (f,):
        raise ShapeError(f"bias must have shape ({f},), got {bias.shape}")
    if h < kh or w < kw:
        raise ShapeError(f"input {h}x{w} is smaller than kernel {kh}x{kw}")
    if stride < 1:
        raise ShapeError(f"stride must be positive, got {stride}")

    k = kh
    cols, h_out, w_out = _im2col(x.data, k, stride)
    w_mat = kernel.data.reshape(f, c * k * k)
    out_mat = cols @ w_mat.T + bias.data
    out = Tensor(out_mat.transpose(0, 2, 1).reshape(n, f, h_out, w_out))

    def bwd(g):
        g_mat = g.reshape(n, f, h_out * w_out).transpose(0, 2, 1)
        if kernel.requires_grad:
            _accum(kernel, np.tensordot(g_mat, cols, axes=([0, 1], [0, 1])).reshape(kernel.shape), owned=True)
        if bias.requires_grad:
            _accum(bias, g.sum(axis=(0, 2, 3)), owned=True)
        if x.requires_grad:
            gcols = g_mat @ w_mat
            _accum(x, _col2im(gcols, x.shape, k, stride, h_out, w_out), owned=True)

    return _maybe_record(out, (x, kernel, bias), bwd)


def conv2d_reference(x, kernel, bias, stride=1):
    """Six-loop valid cross-correlation on raw arrays. Test oracle only."""
    x = np.asarray(x)
    kernel = np.asarray(kernel)
    bias = np.asarray(bias)
    n, c, h, w = x.shape
    f, _, k, _ = kernel.shape
    h_out = (h - k) // stride + 1
    w_out = (w - k) // stride + 1
    out = np.zeros((n, f, h_out, w_out), dtype=x.dtype)
    for ni in range(n):
        for fi in range(f):
            for oi in range(h_out):
                for oj in range(w_out):
                    acc = 0.0
                    for ci in range(c):
                        for ki in range(k):
                            for kj in range(k):
                                acc += (
                                    x[ni, ci, oi * stride + ki, oj * stride + kj]
                                    * kernel[fi, ci, ki, kj]
                                )
                    out[ni, fi, oi, oj] = acc + bias[fi]
    return out


# ---------------------------------------------------------------------------
# capsule-specific nonlinearities
# ---------------------------------------------------------------------------


def softmax(x, axis):
    """Numerically stabilized softmax along ``axis``."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def bwd(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        _accum(x, y * (g - dot), owned=True)

    return _maybe_record(out, (x,), bwd)


def squash(s, axis=-1, eps=1e-8):
    """Map vectors along ``axis`` to the same direction with norm in [0, 1).

    v = (|s|^2 / (1 + |s|^2)) * (s / |s|), with the norm stabilized as
    sqrt(sum(s^2) + eps) so the backward pass stays finite at s = 0.
    """
    sq = (s.data**2).sum(axis=axis, keepdims=True)
    n2 = sq + eps
    n = np.sqrt(n2)
    scale = n / (1.0 + n2)
    out = Tensor(scale * s.data)

    def bwd(g):
        dot = (g * s.data).sum(axis=axis, keepdims=True)
        dscale_dn = (1.0 - n2) / (1.0 + n2) ** 2
        _accum(s, scale * g + dot * dscale_dn / n * s.data, owned=True)

    return _maybe_record(out, (s,), bwd)


def vector_norm(x, axis=-1, keepdims=False, eps=1e-8):
    """Euclidean norm along ``axis``, stabilized as sqrt(sum(x^2) + eps)."""
    sq = (x.data**2).sum(axis=axis, keepdims=True)
    n = np.sqrt(sq + eps)
    out = Tensor(n if keepdims else np.squeeze(n, axis=axis))

    def bwd(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        _accum(x, gg * x.data / n, owned=True)

    return _maybe_record(out, (x,), bwd)


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    """Result of comparing analytic gradients against central differences."""

    max_rel_error: float
    tol: float
    n_checked: int
    worst: tuple = ()  # (tensor index, flat element index, analytic, numeric)
    failures: list = field(default_factory=list)

    @property
    def passed(self):
        return self.max_rel_error < self.tol


def grad_check(f, inputs, h=1e-6, tol=1e-4, max_elements=None, rng=None):
    """Check analytic gradients of ``f(*inputs)`` against central differences.

    ``f`` must build a scalar from recorded operations and be deterministic.
    Inputs should be float64 for the stated tolerances to be meaningful.
    ``max_elements`` caps the number of finite-difference probes per input
    (sampled with ``rng``); None probes every element.

    The relative error denominator is floored at 1e-3 so that near-zero
    gradient components are compared absolutely, below the noise floor of
    the h=1e-6 central difference.
    """
    for t in inputs:
        t.requires_grad = True
        t.zero_grad()
    with Tape() as tape:
        loss = f(*inputs)
    tape.backward(loss)
    analytic = [np.array(t.grad, copy=True) for t in inputs]

    if rng is None:
        rng = np.random.default_rng(0)

    max_rel = 0.0
    worst = ()
    failures = []
    n_checked = 0
    for ti, t in enumerate(inputs):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            idx = rng.choice(flat.size, size=max_elements, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = f(*inputs).item()
            flat[i] = orig - h
            f_minus = f(*inputs).item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = analytic[ti].reshape(-1)[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-3)
            n_checked += 1
            if rel > max_rel:
                max_rel = rel
                worst = (ti, int(i), float(a), float(numeric))
            if rel >= tol:
                failures.append((ti, int(i), float(a), float(numeric), float(rel)))
    return GradCheckReport(max_rel_error=max_rel, tol=tol, n_checked=n_checked, worst=worst, failures=failures)
