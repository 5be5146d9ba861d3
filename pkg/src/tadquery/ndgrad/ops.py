"""Differentiable primitives.

Each op is a pure forward ``fwd(*values, **kw) -> (out, ctx)`` and a
backward ``bwd(g, ctx, *parents, **kw) -> grads``. Nodes keep the forward
so a recorded graph can be re-evaluated from perturbed leaves (see
:mod:`.gradcheck`).
"""
from __future__ import annotations

import builtins

import numpy as np
from scipy import sparse

from .engine import ContractError, DiffArray, ShapeError, as_array, make_node

LAYER_NORM_EPS = 1e-5


class DomainError(ValueError):
    pass


class RangeError(IndexError):
    pass


def _apply(op: str, fwd, bwd, *parents, **kw) -> DiffArray:
    parents = tuple(as_array(p) for p in parents)
    out, ctx = fwd(*[p.values for p in parents], **kw)
    return make_node(out, parents, lambda g: bwd(g, ctx, *parents, **kw), op,
                     lambda: fwd(*[p.values for p in parents], **kw)[0], kw)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ----------------------------------------------------------------- binary

def _add_fwd(a, b):
    return a + b, None


def _add_bwd(g, ctx, a, b):
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def add(a, b) -> DiffArray:
    return _apply("add", _add_fwd, _add_bwd, a, b)


def _sub_fwd(a, b):
    return a - b, None


def _sub_bwd(g, ctx, a, b):
    return _unbroadcast(g, a.shape), (_unbroadcast(-g, b.shape) if b.requires_grad else None)


def sub(a, b) -> DiffArray:
    return _apply("sub", _sub_fwd, _sub_bwd, a, b)


def _mul_fwd(a, b):
    return a * b, None


def _mul_bwd(g, ctx, a, b):
    ga = _unbroadcast(g * b.values, a.shape) if a.requires_grad else None
    gb = _unbroadcast(g * a.values, b.shape) if b.requires_grad else None
    return ga, gb


def mul(a, b) -> DiffArray:
    return _apply("mul", _mul_fwd, _mul_bwd, a, b)


def scalar_mul(a, c: float) -> DiffArray:
    return mul(a, float(c))


def _div_fwd(a, b):
    out = a / b
    return out, out


def _div_bwd(g, out, a, b):
    ga = _unbroadcast(g / b.values, a.shape) if a.requires_grad else None
    gb = _unbroadcast(-g * out / b.values, b.shape) if b.requires_grad else None
    return ga, gb


def div(a, b) -> DiffArray:
    return _apply("div", _div_fwd, _div_bwd, a, b)


def _min_fwd(a, b):
    pick_a = a <= b
    return np.where(pick_a, a, b), pick_a


def _max_fwd(a, b):
    pick_a = a >= b
    return np.where(pick_a, a, b), pick_a


def _select_bwd(g, pick_a, a, b):
    ga = _unbroadcast(g * pick_a, a.shape) if a.requires_grad else None
    gb = _unbroadcast(g * ~pick_a, b.shape) if b.requires_grad else None
    return ga, gb


def minimum(a, b) -> DiffArray:
    """Elementwise min; ties route the gradient to ``a``."""
    return _apply("minimum", _min_fwd, _select_bwd, a, b)


def maximum(a, b) -> DiffArray:
    """Elementwise max; ties route the gradient to ``a``."""
    return _apply("maximum", _max_fwd, _select_bwd, a, b)


def _matmul_fwd(a, b):
    return a @ b, None


def _matmul_bwd(g, ctx, a, b):
    ga = _unbroadcast(g @ np.swapaxes(b.values, -1, -2), a.shape) if a.requires_grad else None
    gb = _unbroadcast(np.swapaxes(a.values, -1, -2) @ g, b.shape) if b.requires_grad else None
    return ga, gb


def matmul(a, b) -> DiffArray:
    a, b = as_array(a), as_array(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return _apply("matmul", _matmul_fwd, _matmul_bwd, a, b)


def _linear_fwd(x, w, b):
    return x @ w + b, None


def _linear_bwd(g, ctx, x, w, b):
    gx = g @ w.values.T if x.requires_grad else None
    gw = x.values.T @ g if w.requires_grad else None
    gb = g.sum(axis=0) if b.requires_grad else None
    return gx, gw, gb


def linear(x, weight, bias) -> DiffArray:
    """Fused ``x @ weight + bias`` for 2-D ``x``."""
    x, weight = as_array(x), as_array(weight)
    if x.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear shape mismatch: {x.shape} @ {weight.shape}")
    return _apply("linear", _linear_fwd, _linear_bwd, x, weight, bias)


# ------------------------------------------------------------------ unary

def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _exp_fwd(a):
    out = np.exp(a)
    return out, out


def exp(a) -> DiffArray:
    return _apply("exp", _exp_fwd, lambda g, out, a: (g * out,), a)


def _log_fwd(a):
    if np.any(a <= 0):
        raise DomainError("log of non-positive value")
    return np.log(a), None


def log(a) -> DiffArray:
    return _apply("log", _log_fwd, lambda g, ctx, a: (g / a.values,), a)


def _sigmoid_fwd(a):
    out = _sigmoid(a)
    return out, out


def sigmoid(a) -> DiffArray:
    return _apply("sigmoid", _sigmoid_fwd, lambda g, out, a: (g * out * (1.0 - out),), a)


def _softplus_fwd(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x))), None


def softplus(a) -> DiffArray:
    """Stable ``log(1 + exp(a))``."""
    return _apply("softplus", _softplus_fwd, lambda g, ctx, a: (g * _sigmoid(a.values),), a)


def _relu_fwd(a):
    active = a > 0
    return np.where(active, a, 0.0), active


def relu(a) -> DiffArray:
    return _apply("relu", _relu_fwd, lambda g, active, a: (g * active,), a)


def abs(a) -> DiffArray:
    return _apply("abs", lambda a: (np.abs(a), None), lambda g, ctx, a: (g * np.sign(a.values),), a)


def power(a, exponent: float) -> DiffArray:
    def bwd(g, ctx, a, exponent):
        return (g * exponent * a.values ** (exponent - 1.0),)

    return _apply("power", lambda a, exponent: (a ** exponent, None), bwd, a, exponent=float(exponent))


def _sqrt_fwd(a):
    if np.any(a < 0):
        raise DomainError("sqrt of negative value")
    out = np.sqrt(a)
    return out, out


def sqrt(a) -> DiffArray:
    return _apply("sqrt", _sqrt_fwd, lambda g, out, a: (g * 0.5 / out,), a)


def _clip_fwd(a, low, high):
    inside = np.ones(a.shape, dtype=bool)
    if low is not None:
        inside &= a >= low
    if high is not None:
        inside &= a <= high
    return np.clip(a, low, high), inside


def clip(a, low=None, high=None) -> DiffArray:
    """Clamp into [low, high]; zero gradient where clamping is active."""
    return _apply("clip", _clip_fwd, lambda g, inside, a, low, high: (g * inside,), a, low=low, high=high)


# ------------------------------------------------------------- reductions

def _sum_fwd(a, axis, keepdims):
    return np.asarray(a.sum(axis=axis, keepdims=keepdims)), None


def _sum_bwd(g, ctx, a, axis, keepdims):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, a.shape),)


def sum(a, axis=None, keepdims=False) -> DiffArray:
    return _apply("sum", _sum_fwd, _sum_bwd, a, axis=axis, keepdims=keepdims)


def mean(a, axis=None, keepdims=False) -> DiffArray:
    a = as_array(a)
    count = a.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


def _lse_fwd(a, axis):
    shift = a.max(axis=axis, keepdims=True)
    ex = np.exp(a - shift)
    total = ex.sum(axis=axis, keepdims=True)
    return (np.log(total) + shift).squeeze(axis), ex / total


def logsumexp(a, axis=-1) -> DiffArray:
    return _apply("logsumexp", _lse_fwd, lambda g, w, a, axis: (np.expand_dims(g, axis) * w,), a, axis=axis)


# ---------------------------------------------------------- shape / index

def reshape(a, shape) -> DiffArray:
    return _apply("reshape", lambda a, shape: (a.reshape(shape), None),
                  lambda g, ctx, a, shape: (g.reshape(a.shape),), a, shape=tuple(shape))


def transpose(a, axes=None) -> DiffArray:
    def bwd(g, ctx, a, axes):
        return (np.transpose(g, None if axes is None else np.argsort(axes)),)

    return _apply("transpose", lambda a, axes: (np.transpose(a, axes), None), bwd, a, axes=axes)


def _is_basic_index(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return builtins.all(
        isinstance(p, (int, np.integer, builtins.slice)) or p is None or p is Ellipsis for p in parts
    )


def _index_bwd(g, basic, a, idx):
    full = np.zeros(a.shape)
    if basic:
        full[idx] = g
    else:
        np.add.at(full, idx, g)
    return (full,)


def index(a, idx) -> DiffArray:
    """Basic or advanced indexing; backward scatters (accumulating repeats)."""
    return _apply("index", lambda a, idx: (np.array(a[idx]), _is_basic_index(idx)), _index_bwd, a, idx=idx)


def slice(a, start: int, stop: int, axis: int = 0) -> DiffArray:
    sl = [builtins.slice(None)] * as_array(a).ndim
    sl[axis] = builtins.slice(start, stop)
    return index(a, tuple(sl))


def concat(arrays, axis: int = 0) -> DiffArray:
    arrays = [as_array(x) for x in arrays]
    bounds = np.cumsum([0] + [x.shape[axis] for x in arrays])

    def bwd(g, ctx, *parents, axis):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(parents)))

    return _apply("concat", lambda *v, axis: (np.concatenate(v, axis=axis), None), bwd, *arrays, axis=axis)


def stack(arrays, axis: int = 0) -> DiffArray:
    def bwd(g, ctx, *parents, axis):
        return tuple(np.take(g, i, axis=axis) for i in range(len(parents)))

    return _apply("stack", lambda *v, axis: (np.stack(v, axis=axis), None), bwd, *arrays, axis=axis)


# ------------------------------------------------------------- composites

def _ln_fwd(x, scale, shift, eps):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv_std = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv_std
    return xhat * scale + shift, (xhat, inv_std)


def _ln_bwd(g, ctx, x, scale, shift, eps):
    xhat, inv_std = ctx
    n = xhat.shape[-1]
    gxhat = g * scale.values
    gx = inv_std / n * (
        n * gxhat - gxhat.sum(axis=-1, keepdims=True) - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True)
    )
    flat_g = g.reshape(-1, n)
    gscale = (flat_g * xhat.reshape(-1, n)).sum(axis=0) if scale.requires_grad else None
    gshift = flat_g.sum(axis=0) if shift.requires_grad else None
    return gx, gscale, gshift


def layer_norm(a, scale=None, shift=None, eps: float = LAYER_NORM_EPS) -> DiffArray:
    """Normalize the last dimension (epsilon in the variance), then scale and shift."""
    a = as_array(a)
    if scale is None:
        scale = np.ones(a.shape[-1])
    if shift is None:
        shift = np.zeros(a.shape[-1])
    return _apply("layer_norm", _ln_fwd, _ln_bwd, a, scale, shift, eps=eps)


def _softmax_fwd(x, mask):
    if mask is None:
        ex = np.exp(x - x.max(axis=-1, keepdims=True))
    else:
        shift = np.where(mask, x, -np.inf).max(axis=-1, keepdims=True)
        ex = np.where(mask, np.exp(np.where(mask, x - shift, 0.0)), 0.0)
    out = ex / ex.sum(axis=-1, keepdims=True)
    return out, out


def _softmax_bwd(g, out, a, mask):
    return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)


def softmax_lastdim(a, mask=None) -> DiffArray:
    """Softmax over the last axis restricted to ``mask``; masked entries are exactly 0."""
    a = as_array(a)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != a.shape:
            raise ShapeError(f"mask shape {mask.shape} does not match logits {a.shape}")
        if not mask.any(axis=-1).all():
            raise ContractError("softmax row with every entry masked")
    return _apply("softmax", _softmax_fwd, _softmax_bwd, a, mask=mask)


def l2_normalize(a, eps: float = 1e-8) -> DiffArray:
    """Rows divided by ``sqrt(|row|^2 + eps^2)``."""
    a = as_array(a)
    norm = sqrt(sum(mul(a, a), axis=-1, keepdims=True) + eps * eps)
    return div(a, norm)


def _interp_weights(p: np.ndarray, length: int, clamp: bool):
    if clamp:
        inside = (p >= 0) & (p <= length - 1)
        p = np.clip(p, 0.0, length - 1)
    else:
        if np.any((p < 0) | (p > length - 1)):
            raise RangeError(f"sample position outside [0, {length - 1}]")
        inside = np.ones(p.shape, dtype=bool)
    lo = np.minimum(np.floor(p).astype(np.int64), length - 1)
    hi = np.minimum(lo + 1, length - 1)
    return lo, hi, p - lo, inside


def _gather_fwd(f, p, clamp):
    lo, hi, w, inside = _interp_weights(p, f.shape[0], clamp)
    out = (1.0 - w)[:, None] * f[lo] + w[:, None] * f[hi]
    return out, (lo, hi, w, inside)


def _gather_bwd(g, ctx, features, positions, clamp):
    lo, hi, w, inside = ctx
    f = features.values
    gf = gp = None
    if features.requires_grad:
        gf = np.zeros_like(f)
        np.add.at(gf, lo, (1.0 - w)[:, None] * g)
        np.add.at(gf, hi, w[:, None] * g)
    if positions.requires_grad:
        gp = ((f[hi] - f[lo]) * g).sum(axis=-1) * inside
    return gf, gp


def linear_interp_gather(features, positions, clamp: bool = True) -> DiffArray:
    """Rows of ``features`` [T, D] sampled at real ``positions`` [S] by linear interpolation."""
    return _apply("interp_gather", _gather_fwd, _gather_bwd, features, positions, clamp=clamp)


def _mh_fwd(values, positions, heads, clamp):
    length, width = values.shape
    dh = width // heads
    n, _, k = positions.shape
    lo, hi, w, inside = _interp_weights(positions, length, clamp)
    # block-diagonal sparse interpolation matrix: row (h, n, k) reads head h's
    # channel slice at frames lo and hi
    v = values.reshape(length, heads, dh).transpose(1, 0, 2).reshape(heads * length, dh)
    base = (np.arange(heads) * length)[None, :, None]
    rows = np.arange(n * heads * k)
    cols = np.concatenate([(lo + base).reshape(-1), (hi + base).reshape(-1)])
    data = np.concatenate([(1.0 - w).reshape(-1), w.reshape(-1)])
    interp = sparse.csr_matrix((data, (np.concatenate([rows, rows]), cols)), shape=(n * heads * k, heads * length))
    out = np.asarray(interp @ v).reshape(n, heads, k, dh)
    return out, (interp, v, lo + base, hi + base, inside)


def _mh_bwd(g, ctx, values, positions, heads, clamp):
    interp, v, lo, hi, inside = ctx
    length, width = values.shape
    n, _, k, dh = g.shape
    gv = gp = None
    if values.requires_grad:
        gflat = np.asarray(interp.T @ g.reshape(-1, dh))
        gv = gflat.reshape(heads, length, dh).transpose(1, 0, 2).reshape(length, width)
    if positions.requires_grad:
        gp = ((v[hi] - v[lo]) * g).sum(axis=-1) * inside
    return gv, gp


def multihead_interp_gather(values, positions, heads: int, clamp: bool = True) -> DiffArray:
    """Per-head linear-interpolation sampling.

    ``values`` is [T, heads * dh]; ``positions`` is [N, heads, K] in frame
    coordinates. Returns [N, heads, K, dh] where head ``h`` samples only its
    own channel slice.
    """
    values, positions = as_array(values), as_array(positions)
    length, width = values.shape
    n, h_, k = positions.shape
    if h_ != heads or width % heads:
        raise ShapeError(f"cannot split {values.shape} into {heads} heads for positions {positions.shape}")
    return _apply("mh_interp_gather", _mh_fwd, _mh_bwd, values, positions, heads=heads, clamp=clamp)
