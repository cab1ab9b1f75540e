"""Hot elementwise and row-reduction kernels with two interchangeable backends.

The inner loops that dominate non-BLAS time (gelu, sigmoid, softmax rows,
layer-norm rows, the fused AdamW update) are compiled with numba when it is
importable. A pure numpy implementation of every kernel ships alongside and
is selected by the ``EXNET_BACKEND`` environment variable:

* unset or ``auto``: numba if it imports, numpy otherwise
* ``numpy``: always the numpy path
* ``numba``: the compiled path, failing fast if numba is unavailable

Matrix products are deliberately not here; ``np.matmul`` already hits BLAS.

Every kernel preserves the floating dtype of its array arguments (float32
in, float32 out) and runs single-threaded with a fixed iteration order, so
repeated calls on identical inputs are bitwise identical within a backend.
"""

from __future__ import annotations

import math
import os
import warnings

import numpy as np
from scipy.special import erf as _erf

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        # nop decorator so the module still imports; the numpy path is used
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


# ---------------------------------------------------------------- numpy path


def _np_gelu_fwd(x):
    phi = 0.5 * (1.0 + _erf(x * _INV_SQRT2))
    return (x * phi).astype(x.dtype, copy=False)

def _np_gelu_bwd(x, gy):
    phi = 0.5 * (1.0 + _erf(x * _INV_SQRT2))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
    return (gy * (phi + x * pdf)).astype(x.dtype, copy=False)

def _np_sigmoid_fwd(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out

def _np_sigmoid_bwd(y, gy):
    return gy * y * (1.0 - y)

def _np_softmax_fwd(x):
    # x: (n, d), softmax over the last axis
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=-1, keepdims=True)

def _np_softmax_bwd(y, gy):
    inner = (y * gy).sum(axis=-1, keepdims=True)
    return y * (gy - inner)

def _np_layer_norm_fwd(x, gamma, beta, eps):
    mean = x.mean(axis=-1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    y = (x - mean) * rstd * gamma + beta
    return y, mean.squeeze(-1), rstd.squeeze(-1)

def _np_layer_norm_bwd(x, gamma, mean, rstd, gy):
    mean = mean[..., None]
    rstd = rstd[..., None]
    xhat = (x - mean) * rstd
    gxhat = gy * gamma
    d = x.shape[-1]
    gx = rstd * (
        gxhat
        - gxhat.mean(axis=-1, keepdims=True)
        - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
    )
    ggamma = (gy * xhat).reshape(-1, d).sum(axis=0)
    gbeta = gy.reshape(-1, d).sum(axis=0)
    return gx.astype(x.dtype, copy=False), ggamma, gbeta

def _np_adamw_update(p, g, m, v, t, lr, b1, b2, eps, wd):
    # in place; p/g/m/v are flat views of equal dtype
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * g * g
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    p *= 1.0 - lr * wd
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


# ---------------------------------------------------------------- numba path

@njit(cache=True)
def _nb_gelu_fwd(x):
    # x: 1d contiguous
    out = np.empty_like(x)
    for i in range(x.size):
        xi = x[i]
        out[i] = xi * 0.5 * (1.0 + math.erf(xi * _INV_SQRT2))
    return out

@njit(cache=True)
def _nb_gelu_bwd(x, gy):
    out = np.empty_like(x)
    for i in range(x.size):
        xi = x[i]
        phi = 0.5 * (1.0 + math.erf(xi * _INV_SQRT2))
        pdf = math.exp(-0.5 * xi * xi) * _INV_SQRT2PI
        out[i] = gy[i] * (phi + xi * pdf)
    return out

@njit(cache=True)
def _nb_sigmoid_fwd(x):
    out = np.empty_like(x)
    for i in range(x.size):
        xi = x[i]
        if xi >= 0.0:
            out[i] = 1.0 / (1.0 + math.exp(-xi))
        else:
            e = math.exp(xi)
            out[i] = e / (1.0 + e)
    return out

@njit(cache=True)
def _nb_sigmoid_bwd(y, gy):
    out = np.empty_like(y)
    for i in range(y.size):
        yi = y[i]
        out[i] = gy[i] * yi * (1.0 - yi)
    return out

@njit(cache=True)
def _nb_softmax_fwd(x):
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
def _nb_softmax_bwd(y, gy):
    n, d = y.shape
    out = np.empty_like(y)
    for i in range(n):
        inner = 0.0
        for j in range(d):
            inner += y[i, j] * gy[i, j]
        for j in range(d):
            out[i, j] = y[i, j] * (gy[i, j] - inner)
    return out

@njit(cache=True)
def _nb_layer_norm_fwd(x, gamma, beta, eps):
    n, d = x.shape
    y = np.empty_like(x)
    mean = np.empty(n, dtype=x.dtype)
    rstd = np.empty(n, dtype=x.dtype)
    for i in range(n):
        s = 0.0
        for j in range(d):
            s += x[i, j]
        mu = s / d
        sv = 0.0
        for j in range(d):
            dx = x[i, j] - mu
            sv += dx * dx
        r = 1.0 / math.sqrt(sv / d + eps)
        mean[i] = mu
        rstd[i] = r
        for j in range(d):
            y[i, j] = (x[i, j] - mu) * r * gamma[j] + beta[j]
    return y, mean, rstd

@njit(cache=True)
def _nb_layer_norm_bwd(x, gamma, mean, rstd, gy):
    n, d = x.shape
    gx = np.empty_like(x)
    ggamma = np.zeros(d, dtype=x.dtype)
    gbeta = np.zeros(d, dtype=x.dtype)
    for i in range(n):
        mu = mean[i]
        r = rstd[i]
        s1 = 0.0
        s2 = 0.0
        for j in range(d):
            xhat = (x[i, j] - mu) * r
            gxh = gy[i, j] * gamma[j]
            s1 += gxh
            s2 += gxh * xhat
            ggamma[j] += gy[i, j] * xhat
            gbeta[j] += gy[i, j]
        s1 /= d
        s2 /= d
        for j in range(d):
            xhat = (x[i, j] - mu) * r
            gx[i, j] = r * (gy[i, j] * gamma[j] - s1 - xhat * s2)
    return gx, ggamma, gbeta

@njit(cache=True)
def _nb_adamw_update(p, g, m, v, t, lr, b1, b2, eps, wd):
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    decay = 1.0 - lr * wd
    for i in range(p.size):
        gi = g[i]
        mi = b1 * m[i] + (1.0 - b1) * gi
        vi = b2 * v[i] + (1.0 - b2) * gi * gi
        m[i] = mi
        v[i] = vi
        p[i] = p[i] * decay - lr * (mi / bc1) / (math.sqrt(vi / bc2) + eps)


# ---------------------------------------------------------------- dispatch

_ENV = os.environ.get("EXNET_BACKEND", "auto").strip().lower() or "auto"
if _ENV not in ("auto", "numpy", "numba"):
    raise ValueError(f"EXNET_BACKEND must be auto, numpy or numba, got {_ENV!r}")
if _ENV == "numba" and not HAS_NUMBA:
    raise ImportError("EXNET_BACKEND=numba but numba is not importable")
if _ENV == "auto" and not HAS_NUMBA:  # pragma: no cover
    warnings.warn("numba unavailable, falling back to the numpy kernel path")

_USE_NUMBA = HAS_NUMBA if _ENV == "auto" else _ENV == "numba"


def active_backend() -> str:
    """Name of the kernel path selected at import time."""
    return "numba" if _USE_NUMBA else "numpy"


def _rows(x: np.ndarray) -> np.ndarray:
    # 2d contiguous view over the last axis
    return np.ascontiguousarray(x).reshape(-1, x.shape[-1])


def _flat(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x).reshape(-1)


def gelu_fwd(x: np.ndarray) -> np.ndarray:
    if _USE_NUMBA:
        return _nb_gelu_fwd(_flat(x)).reshape(x.shape)
    return _np_gelu_fwd(x)


def gelu_bwd(x: np.ndarray, gy: np.ndarray) -> np.ndarray:
    if _USE_NUMBA:
        return _nb_gelu_bwd(_flat(x), _flat(gy)).reshape(x.shape)
    return _np_gelu_bwd(x, gy)


def sigmoid_fwd(x: np.ndarray) -> np.ndarray:
    if _USE_NUMBA:
        return _nb_sigmoid_fwd(_flat(x)).reshape(x.shape)
    return _np_sigmoid_fwd(x)


def sigmoid_bwd(y: np.ndarray, gy: np.ndarray) -> np.ndarray:
    if _USE_NUMBA:
        return _nb_sigmoid_bwd(_flat(y), _flat(gy)).reshape(y.shape)
    return _np_sigmoid_bwd(y, gy)


def softmax_fwd(x: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis."""
    if _USE_NUMBA:
        return _nb_softmax_fwd(_rows(x)).reshape(x.shape)
    return _np_softmax_fwd(x)


def softmax_bwd(y: np.ndarray, gy: np.ndarray) -> np.ndarray:
    if _USE_NUMBA:
        return _nb_softmax_bwd(_rows(y), _rows(gy)).reshape(y.shape)
    return _np_softmax_bwd(y, gy)


def layer_norm_fwd(x, gamma, beta, eps):
    """Normalize over the last axis. Returns (y, mean, rstd); the mean and
    reciprocal standard deviation are cached for the backward pass."""
    lead = x.shape[:-1]
    if _USE_NUMBA:
        y, mean, rstd = _nb_layer_norm_fwd(_rows(x), gamma, beta, x.dtype.type(eps))
        return y.reshape(x.shape), mean.reshape(lead), rstd.reshape(lead)
    y, mean, rstd = _np_layer_norm_fwd(x, gamma, beta, eps)
    return y, mean, rstd


def layer_norm_bwd(x, gamma, mean, rstd, gy):
    n = int(np.prod(x.shape[:-1], dtype=np.int64)) if x.ndim > 1 else 1
    if _USE_NUMBA:
        gx, ggamma, gbeta = _nb_layer_norm_bwd(
            _rows(x), gamma, mean.reshape(n), rstd.reshape(n), _rows(gy)
        )
        return gx.reshape(x.shape), ggamma, gbeta
    return _np_layer_norm_bwd(x, gamma, mean, rstd, gy)


def adamw_update(p, g, m, v, t, lr, b1, b2, eps, wd) -> None:
    """One fused decoupled-weight-decay Adam step, in place on flat views."""
    if _USE_NUMBA:
        _nb_adamw_update(p, g, m, v, t, lr, b1, b2, eps, wd)
    else:
        _np_adamw_update(p, g, m, v, t, lr, b1, b2, eps, wd)
