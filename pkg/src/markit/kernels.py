"""Hot numeric kernels with interchangeable numba and pure-numpy backends.

Everything here is shape-dumb on purpose: callers pre-flatten leading axes so
each kernel sees contiguous 1D/2D arrays.  Backend selection happens once at
import time via the MARKIT_BACKEND environment variable:

  MARKIT_BACKEND=numba   require the JIT kernels (raise if numba is missing)
  MARKIT_BACKEND=numpy   force the pure-numpy fallbacks
  unset                  use numba when importable, else fall back silently

``markit bench`` times both backends on training-shaped inputs.
"""

from __future__ import annotations

import math
import os

import numpy as np

GELU_C0 = math.sqrt(2.0 / math.pi)
GELU_C1 = 0.044715


# ---------------------------------------------------------------------------
# pure-numpy implementations


def _gelu_fwd_np(x):
    u = GELU_C0 * (x + GELU_C1 * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(u))


def _gelu_bwd_np(x, g):
    x2 = x * x
    t = np.tanh(GELU_C0 * (x + GELU_C1 * x * x2))
    slope = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C0 * (1.0 + 3.0 * GELU_C1 * x2)
    return g * slope


def _softmax_fwd_np(x):
    m = x.max(axis=1, keepdims=True)
    out = np.subtract(x, m)
    np.exp(out, out=out)
    out /= out.sum(axis=1, keepdims=True)
    return out


def _softmax_bwd_np(y, g):
    dot = (y * g).sum(axis=1, keepdims=True)
    return y * (g - dot)


def _layernorm_fwd_np(x, gain, bias, eps):
    mu = x.mean(axis=1, keepdims=True)
    d = x - mu
    var = (d * d).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = d * rstd
    return xhat * gain + bias, xhat, rstd[:, 0].copy()


def _layernorm_bwd_np(xhat, rstd, gain, g):
    dxhat = g * gain
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = (dxhat - m1 - xhat * m2) * rstd[:, None]
    return dx, (g * xhat).sum(axis=0), g.sum(axis=0)


def _scatter_add_rows_np(n_out, idx, rows):
    out = np.zeros((n_out, rows.shape[1]), dtype=rows.dtype)
    np.add.at(out, idx, rows)
    return out


def _paint_square_np(frame, cy, cx, half, value):
    """Alpha-composite an axis-aligned square of side 2*half onto frame.

    Coverage per pixel is the exact overlap area of the pixel cell with the
    square, so sub-pixel motion renders smoothly.  Mutates frame in place.
    """
    h, w = frame.shape
    y0, y1 = cy - half, cy + half
    x0, x1 = cx - half, cx + half
    iy0, iy1 = max(int(math.floor(y0)), 0), min(int(math.ceil(y1)), h)
    ix0, ix1 = max(int(math.floor(x0)), 0), min(int(math.ceil(x1)), w)
    if iy0 >= iy1 or ix0 >= ix1:
        return
    ys = np.arange(iy0, iy1, dtype=frame.dtype)
    xs = np.arange(ix0, ix1, dtype=frame.dtype)
    cov_y = np.clip(np.minimum(ys + 1.0, y1) - np.maximum(ys, y0), 0.0, 1.0)
    cov_x = np.clip(np.minimum(xs + 1.0, x1) - np.maximum(xs, x0), 0.0, 1.0)
    c = np.outer(cov_y, cov_x)
    sub = frame[iy0:iy1, ix0:ix1]
    sub *= 1.0 - c
    sub += value * c


_NUMPY_IMPLS = {
    "gelu_fwd": _gelu_fwd_np,
    "gelu_bwd": _gelu_bwd_np,
    "softmax_fwd": _softmax_fwd_np,
    "softmax_bwd": _softmax_bwd_np,
    "layernorm_fwd": _layernorm_fwd_np,
    "layernorm_bwd": _layernorm_bwd_np,
    "scatter_add_rows": _scatter_add_rows_np,
    "paint_square": _paint_square_np,
}


# ---------------------------------------------------------------------------
# numba implementations


def _build_numba_impls():
    from numba import njit

    @njit(cache=True)
    def gelu_fwd(x):
        out = np.empty_like(x)
        flat_x = x.ravel()
        flat_o = out.ravel()
        for i in range(flat_x.size):
            v = flat_x[i]
            u = GELU_C0 * (v + GELU_C1 * v * v * v)
            flat_o[i] = 0.5 * v * (1.0 + math.tanh(u))
        return out

    @njit(cache=True)
    def gelu_bwd(x, g):
        out = np.empty_like(x)
        flat_x = x.ravel()
        flat_g = g.ravel()
        flat_o = out.ravel()
        for i in range(flat_x.size):
            v = flat_x[i]
            v2 = v * v
            t = math.tanh(GELU_C0 * (v + GELU_C1 * v * v2))
            slope = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * GELU_C0 * (1.0 + 3.0 * GELU_C1 * v2)
            flat_o[i] = flat_g[i] * slope
        return out

    @njit(cache=True)
    def softmax_fwd(x):
        n, d = x.shape
        out = np.empty_like(x)
        for i in range(n):
            m = x[i, 0]
            for j in range(1, d):
                if x[i, j] > m:
                    m = x[i, j]
            s = 0.0
            for j in range(d):
                e = math.exp(x[i, j] - m)
                out[i, j] = e
                s += e
            inv = 1.0 / s
            for j in range(d):
                out[i, j] *= inv
        return out

    @njit(cache=True)
    def softmax_bwd(y, g):
        n, d = y.shape
        out = np.empty_like(y)
        for i in range(n):
            dot = 0.0
            for j in range(d):
                dot += y[i, j] * g[i, j]
            for j in range(d):
                out[i, j] = y[i, j] * (g[i, j] - dot)
        return out

    @njit(cache=True)
    def layernorm_fwd(x, gain, bias, eps):
        n, d = x.shape
        y = np.empty_like(x)
        xhat = np.empty_like(x)
        rstd = np.empty(n, dtype=x.dtype)
        for i in range(n):
            mu = 0.0
            for j in range(d):
                mu += x[i, j]
            mu /= d
            var = 0.0
            for j in range(d):
                dv = x[i, j] - mu
                var += dv * dv
            var /= d
            r = 1.0 / math.sqrt(var + eps)
            rstd[i] = r
            for j in range(d):
                h = (x[i, j] - mu) * r
                xhat[i, j] = h
                y[i, j] = h * gain[j] + bias[j]
        return y, xhat, rstd

    @njit(cache=True)
    def layernorm_bwd(xhat, rstd, gain, g):
        n, d = xhat.shape
        dx = np.empty_like(xhat)
        dgain = np.zeros(d, dtype=xhat.dtype)
        dbias = np.zeros(d, dtype=xhat.dtype)
        for i in range(n):
            m1 = 0.0
            m2 = 0.0
            for j in range(d):
                dh = g[i, j] * gain[j]
                m1 += dh
                m2 += dh * xhat[i, j]
            m1 /= d
            m2 /= d
            r = rstd[i]
            for j in range(d):
                dh = g[i, j] * gain[j]
                dx[i, j] = (dh - m1 - xhat[i, j] * m2) * r
                dgain[j] += g[i, j] * xhat[i, j]
                dbias[j] += g[i, j]
        return dx, dgain, dbias

    @njit(cache=True)
    def scatter_add_rows(n_out, idx, rows):
        m, d = rows.shape
        out = np.zeros((n_out, d), dtype=rows.dtype)
        for i in range(m):
            r = idx[i]
            for j in range(d):
                out[r, j] += rows[i, j]
        return out

    @njit(cache=True)
    def paint_square(frame, cy, cx, half, value):
        h, w = frame.shape
        y0 = cy - half
        y1 = cy + half
        x0 = cx - half
        x1 = cx + half
        iy0 = max(int(math.floor(y0)), 0)
        iy1 = min(int(math.ceil(y1)), h)
        ix0 = max(int(math.floor(x0)), 0)
        ix1 = min(int(math.ceil(x1)), w)
        for i in range(iy0, iy1):
            cy_cov = min(i + 1.0, y1) - max(float(i), y0)
            if cy_cov < 0.0:
                cy_cov = 0.0
            elif cy_cov > 1.0:
                cy_cov = 1.0
            for j in range(ix0, ix1):
                cx_cov = min(j + 1.0, x1) - max(float(j), x0)
                if cx_cov < 0.0:
                    cx_cov = 0.0
                elif cx_cov > 1.0:
                    cx_cov = 1.0
                c = cy_cov * cx_cov
                frame[i, j] = frame[i, j] * (1.0 - c) + value * c

    return {
        "gelu_fwd": gelu_fwd,
        "gelu_bwd": gelu_bwd,
        "softmax_fwd": softmax_fwd,
        "softmax_bwd": softmax_bwd,
        "layernorm_fwd": layernorm_fwd,
        "layernorm_bwd": layernorm_bwd,
        "scatter_add_rows": scatter_add_rows,
        "paint_square": paint_square,
    }


# ---------------------------------------------------------------------------
# backend selection
#
# The compiled loops win where fusing passes matters (layernorm, scatter,
# painting); numpy wins where SIMD exp/tanh dominates (softmax, gelu) since
# plain njit calls scalar libm.  The default is that measured mix; set
# MARKIT_BACKEND=numba or =numpy to force one side wholesale (see `markit
# bench` for the numbers on your machine).

_TRANSCENDENTAL = ("gelu_fwd", "gelu_bwd", "softmax_fwd")

_requested = os.environ.get("MARKIT_BACKEND", "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise ValueError(f"MARKIT_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

_numba_impls = None
if _requested != "numpy":
    try:
        _numba_impls = _build_numba_impls()
    except ImportError:
        if _requested == "numba":
            raise
        _numba_impls = None

if _numba_impls is None:
    _ACTIVE = _NUMPY_IMPLS
    _BACKEND_NAME = "numpy"
elif _requested == "numba":
    _ACTIVE = _numba_impls
    _BACKEND_NAME = "numba"
else:
    _ACTIVE = dict(_numba_impls)
    for _name in _TRANSCENDENTAL:
        _ACTIVE[_name] = _NUMPY_IMPLS[_name]
    _BACKEND_NAME = "mixed"

gelu_fwd = _ACTIVE["gelu_fwd"]
gelu_bwd = _ACTIVE["gelu_bwd"]
softmax_fwd = _ACTIVE["softmax_fwd"]
softmax_bwd = _ACTIVE["softmax_bwd"]
layernorm_fwd = _ACTIVE["layernorm_fwd"]
layernorm_bwd = _ACTIVE["layernorm_bwd"]
scatter_add_rows = _ACTIVE["scatter_add_rows"]
paint_square = _ACTIVE["paint_square"]


def backend_name() -> str:
    """Backend in use: 'numba', 'numpy', or the default 'mixed'."""
    return _BACKEND_NAME


def all_backends() -> dict:
    """Mapping backend name -> impl dict, for benchmarking and cross-checks."""
    out = {"numpy": _NUMPY_IMPLS}
    if _numba_impls is not None:
        out["numba"] = _numba_impls
    else:
        try:
            out["numba"] = _build_numba_impls()
        except ImportError:
            pass
    return out
