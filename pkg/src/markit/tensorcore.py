"""Reverse-mode automatic differentiation on numpy arrays.

A Tensor wraps an ndarray (float32 for training, float64 for gradient
verification) and carries a unique id.  Ops are free functions taking the tape
as the first argument; each computes its result eagerly, checks it for
NaN/Inf, and records a backward closure.  ``Tape.backward`` replays records in
reverse, accumulating gradients keyed by tensor id; a tensor that never
influences the loss has an exactly-zero gradient.

There is no general broadcasting.  The only shape-bending ops are the
documented ones: ``add_rowvec`` (bias rows), ``add_const`` (fixed tables such
as positional encodings, broadcast over leading axes), ``repeat_rows``, and
``scale`` by a python scalar.  Everything else requires exact shape agreement
and raises ShapeError otherwise.  Pass ``tape=None`` to run any op without
recording (inference).
"""

from __future__ import annotations

import itertools
import os

import numpy as np

from . import kernels

CHECK_FINITE = os.environ.get("MARKIT_CHECK_FINITE", "1") != "0"

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class ShapeError(ValueError):
    """Operand shapes do not satisfy the op's contract."""


class Tensor:
    """Immutable-by-convention array node; do not mutate .data after creation."""

    __slots__ = ("data", "uid")
    _uids = itertools.count()

    def __init__(self, data, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.uid = next(Tensor._uids)
        _check_finite(arr, "tensor")

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(uid={self.uid}, shape={self.shape}, dtype={self.dtype})"


class Tape:
    """Ordered op records plus gradient accumulators keyed by tensor uid."""

    def __init__(self):
        self._records = []
        self._grads = {}

    def record(self, out: Tensor, inputs, backward, name: str):
        self._records.append((out, tuple(inputs), backward, name))

    def op_names(self):
        return [r[3] for r in self._records]

    def op_input_shapes(self, name: str):
        """Input shapes of every recorded op with the given name (debug aid)."""
        return [tuple(t.shape for t in r[1]) for r in self._records if r[3] == name]

    def backward(self, loss: Tensor, retain_intermediate_grads: bool = False):
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        self._grads = {loss.uid: np.ones(loss.shape, dtype=loss.dtype)}
        for out, inputs, bwd, name in reversed(self._records):
            g = self._grads.get(out.uid)
            if g is None:
                continue
            partials = bwd(g)
            for t, gt in zip(inputs, partials):
                if gt is None:
                    continue
                acc = self._grads.get(t.uid)
                self._grads[t.uid] = gt if acc is None else acc + gt
            if not retain_intermediate_grads and out.uid != loss.uid:
                del self._grads[out.uid]

    def grad(self, t: Tensor) -> np.ndarray:
        """Accumulated gradient of the last backward() wrt t; zeros if t did
        not influence the loss."""
        g = self._grads.get(t.uid)
        if g is None:
            return np.zeros(t.shape, dtype=t.dtype)
        return np.asarray(g)


def _check_finite(arr, name):
    if not CHECK_FINITE:
        return
    # single-pass screen: a finite sum proves all entries finite for the
    # magnitudes seen in training; confirm with the exact check before raising
    if np.isfinite(np.sum(arr)):
        return
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values produced by {name}")


def _emit(tape, data, inputs, backward, name) -> Tensor:
    _check_finite(data, name)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.uid = next(Tensor._uids)
    if tape is not None:
        tape.record(out, inputs, backward, name)
    return out


def _want_same_dtype(name, *tensors):
    dt = tensors[0].dtype
    for t in tensors[1:]:
        if t.dtype != dt:
            raise TypeError(f"{name}: mixed dtypes {dt} and {t.dtype}")
    return dt


def _want_same_shape(name, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{name}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# arithmetic


def add(tape, a: Tensor, b: Tensor) -> Tensor:
    _want_same_dtype("add", a, b)
    _want_same_shape("add", a, b)
    return _emit(tape, a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(tape, a: Tensor, b: Tensor) -> Tensor:
    _want_same_dtype("sub", a, b)
    _want_same_shape("sub", a, b)
    return _emit(tape, a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(tape, a: Tensor, b: Tensor) -> Tensor:
    _want_same_dtype("mul", a, b)
    _want_same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _emit(tape, ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def square(tape, a: Tensor) -> Tensor:
    ad = a.data
    return _emit(tape, ad * ad, (a,), lambda g: (2.0 * ad * g,), "square")


def scale(tape, a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _emit(tape, a.data * s, (a,), lambda g: (g * s,), "scale")


def add_rowvec(tape, a: Tensor, v: Tensor) -> Tensor:
    """a[..., d] + v[d], the bias-add broadcast over all leading axes."""
    _want_same_dtype("add_rowvec", a, v)
    if v.ndim != 1 or a.ndim < 1 or a.shape[-1] != v.shape[0]:
        raise ShapeError(f"add_rowvec: {a.shape} + {v.shape}")
    d = v.shape[0]

    def backward(g):
        return g, g.reshape(-1, d).sum(axis=0)

    return _emit(tape, a.data + v.data, (a, v), backward, "add_rowvec")


def add_const(tape, a: Tensor, c: np.ndarray) -> Tensor:
    """Add a non-learnable array (e.g. positional encodings).

    c must match a trailing slice of a's shape; it broadcasts over the
    remaining leading axes.  No gradient flows into c.
    """
    c = np.asarray(c, dtype=a.dtype)
    if c.ndim > a.ndim or c.shape != a.shape[a.ndim - c.ndim:]:
        raise ShapeError(f"add_const: {a.shape} + {c.shape}")
    return _emit(tape, a.data + c, (a,), lambda g: (g,), "add_const")


def matmul(tape, a: Tensor, b: Tensor) -> Tensor:
    """a[..., m, k] @ b.  b is either 2D [k, n] (shared weight) or has the
    same leading axes as a (batched)."""
    _want_same_dtype("matmul", a, b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ShapeError(f"matmul: operands must be >=2D, got {ad.shape} @ {bd.shape}")
    if bd.ndim == 2:
        if ad.shape[-1] != bd.shape[0]:
            raise ShapeError(f"matmul: {ad.shape} @ {bd.shape}")

        def backward(g):
            ga = g @ bd.T
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return ga, gb

    else:
        if ad.shape[:-2] != bd.shape[:-2] or ad.shape[-1] != bd.shape[-2]:
            raise ShapeError(f"matmul: {ad.shape} @ {bd.shape}")

        def backward(g):
            ga = g @ np.swapaxes(bd, -1, -2)
            gb = np.swapaxes(ad, -1, -2) @ g
            return ga, gb

    return _emit(tape, ad @ bd, (a, b), backward, "matmul")


# ---------------------------------------------------------------------------
# reductions and reshaping


def sum_all(tape, a: Tensor) -> Tensor:
    shape, dt = a.shape, a.dtype

    def backward(g):
        return (np.full(shape, float(g), dtype=dt),)

    return _emit(tape, np.asarray(a.data.sum(), dtype=dt), (a,), backward, "sum_all")


def mean_rows(tape, a: Tensor) -> Tensor:
    """Mean over the row axis: a[..., n, d] -> [..., d]."""
    if a.ndim < 2:
        raise ShapeError(f"mean_rows: need >=2D, got {a.shape}")
    n = a.shape[-2]
    shape = a.shape

    def backward(g):
        return (np.broadcast_to((g / n)[..., None, :], shape),)

    return _emit(tape, a.data.mean(axis=-2), (a,), backward, "mean_rows")


def transpose(tape, a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for ndim {a.ndim}")
    inv = np.argsort(axes)

    def backward(g):
        return (np.transpose(g, inv),)

    return _emit(tape, np.transpose(a.data, axes), (a,), backward, "transpose")


def swap_rows_cols(tape, a: Tensor) -> Tensor:
    """Transpose the last two axes."""
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(tape, a, axes)


def reshape(tape, a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = a.shape
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise ShapeError(f"reshape: {old} has {a.size} elements, target {shape}")

    def backward(g):
        return (g.reshape(old),)

    return _emit(tape, a.data.reshape(shape), (a,), backward, "reshape")


def gather_rows(tape, a: Tensor, idx: np.ndarray) -> Tensor:
    """Select rows: a[n, d] with idx[m] -> [m, d], or batched a[b, n, d] with
    idx[b, m] -> [b, m, d].  Backward scatter-adds into the source rows."""
    idx = np.asarray(idx)
    if not np.issubdtype(idx.dtype, np.integer):
        raise TypeError("gather_rows: idx must be integer")
    idx = idx.astype(np.int64)
    ad = a.data
    if ad.ndim == 2:
        if idx.ndim != 1:
            raise ShapeError(f"gather_rows: idx {idx.shape} for source {ad.shape}")
        n, d = ad.shape
        flat_idx = idx
        out = ad[idx]
    elif ad.ndim == 3:
        if idx.ndim != 2 or idx.shape[0] != ad.shape[0]:
            raise ShapeError(f"gather_rows: idx {idx.shape} for source {ad.shape}")
        b, n, d = ad.shape
        flat_idx = (idx + (np.arange(b, dtype=np.int64) * n)[:, None]).ravel()
        out = np.take_along_axis(ad, idx[:, :, None], axis=1)
    else:
        raise ShapeError(f"gather_rows: source must be 2D or 3D, got {ad.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"gather_rows: index out of range for {n} rows")
    src_shape = ad.shape

    def backward(g):
        rows = np.ascontiguousarray(g.reshape(-1, d))
        total = 1
        for s in src_shape[:-1]:
            total *= s
        acc = kernels.scatter_add_rows(total, flat_idx, rows)
        return (acc.reshape(src_shape),)

    return _emit(tape, out, (a,), backward, "gather_rows")


def concat_rows(tape, parts) -> Tensor:
    """Concatenate along the row axis (-2); all other axes must agree."""
    parts = list(parts)
    if not parts:
        raise ShapeError("concat_rows: empty input")
    _want_same_dtype("concat_rows", *parts)
    first = parts[0]
    for p in parts:
        if p.ndim < 2 or p.shape[:-2] != first.shape[:-2] or p.shape[-1] != first.shape[-1]:
            raise ShapeError(f"concat_rows: incompatible shapes {[p.shape for p in parts]}")
    sizes = [p.shape[-2] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=-2))

    return _emit(tape, np.concatenate([p.data for p in parts], axis=-2), tuple(parts), backward, "concat_rows")


def repeat_rows(tape, a: Tensor, n: int) -> Tensor:
    """Tile a single row n times: a[..., 1, d] -> [..., n, d]."""
    if a.ndim < 2 or a.shape[-2] != 1:
        raise ShapeError(f"repeat_rows: need a single row, got {a.shape}")

    def backward(g):
        return (g.sum(axis=-2, keepdims=True),)

    return _emit(tape, np.repeat(a.data, n, axis=-2), (a,), backward, "repeat_rows")


# ---------------------------------------------------------------------------
# nonlinearities (kernel-backed)


def _rows2d(arr):
    return np.ascontiguousarray(arr.reshape(-1, arr.shape[-1]))


def softmax_rows(tape, a: Tensor) -> Tensor:
    if a.ndim < 1:
        raise ShapeError("softmax_rows: need >=1D")
    shape = a.shape
    y2 = kernels.softmax_fwd(_rows2d(a.data))

    def backward(g):
        return (kernels.softmax_bwd(y2, _rows2d(g)).reshape(shape),)

    return _emit(tape, y2.reshape(shape), (a,), backward, "softmax_rows")


def log_softmax_rows(tape, a: Tensor) -> Tensor:
    ad = a.data
    if ad.ndim < 1:
        raise ShapeError("log_softmax_rows: need >=1D")
    m = ad.max(axis=-1, keepdims=True)
    sh = ad - m
    lse = np.log(np.exp(sh).sum(axis=-1, keepdims=True))
    out = sh - lse
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _emit(tape, out, (a,), backward, "log_softmax_rows")


def layernorm(tape, a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    _want_same_dtype("layernorm", a, gain, bias)
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layernorm: gain/bias must be ({d},), got {gain.shape}/{bias.shape}")
    shape = a.shape
    y2, xhat, rstd = kernels.layernorm_fwd(_rows2d(a.data), gain.data, bias.data, float(eps))
    gd = gain.data

    def backward(g):
        g2 = _rows2d(g)
        dx, dgain, dbias = kernels.layernorm_bwd(xhat, rstd, gd, g2)
        return dx.reshape(shape), dgain, dbias

    return _emit(tape, y2.reshape(shape), (a, gain, bias), backward, "layernorm")


def identity(tape, a: Tensor) -> Tensor:
    """Pass-through node (the dropout-free stand-in where a regularizer
    would sit); gradient flows unchanged."""
    return _emit(tape, a.data, (a,), lambda g: (g,), "identity")


def gelu(tape, a: Tensor) -> Tensor:
    """tanh-approximated GELU; the backward differentiates the approximation."""
    ad = np.ascontiguousarray(a.data)

    def backward(g):
        return (kernels.gelu_bwd(ad, np.ascontiguousarray(g)),)

    return _emit(tape, kernels.gelu_fwd(ad), (a,), backward, "gelu")
