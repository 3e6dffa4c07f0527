"""Differentiable operations over :class:`~xdistill.autodiff.tensor.Tensor`.

Binary elementwise ops accept equal shapes or a scalar on either side (a Python
number or a 0-d tensor).  Anything wider goes through :func:`broadcast_to`
explicitly, which keeps every gradient reduction visible in the graph.

Unary elementwise derivatives live in :data:`UNARY_RULES` and are looked up at
backward time, so a rule can be swapped out (e.g. to build a negative control
for the gradient checker).
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .tensor import IndexedGrad, Tensor

_from_op = Tensor._from_op


# ---------------------------------------------------------------------------
# unary elementwise
# ---------------------------------------------------------------------------

def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _exp_fwd(x):
    with np.errstate(over="ignore"):
        return np.exp(x)


def _log_fwd(x):
    if np.any(x <= 0):
        raise ValueError("log of a non-positive value")
    return np.log(x)


_GELU_C = math.sqrt(2.0 / math.pi)


def _gelu_fwd(x):
    x2 = x * x
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2)))


def _gelu_grad(x, y):
    x2 = x * x
    t = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2))
    du = _GELU_C * (1.0 + 3 * 0.044715 * x2)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du


def _abs_grad(x, y):
    return np.sign(x)


def _sqrt_fwd(x):
    if np.any(x < 0):
        raise ValueError("sqrt of a negative value")
    return np.sqrt(x)


# name -> (forward(x), derivative(x, y)) ; derivative is evaluated elementwise
UNARY_RULES: dict = {
    "exp": (_exp_fwd, lambda x, y: y),
    "log": (_log_fwd, lambda x, y: 1.0 / x),
    "sigmoid": (_sigmoid_np, lambda x, y: y * (1.0 - y)),
    "tanh": (np.tanh, lambda x, y: 1.0 - y * y),
    "abs": (np.abs, _abs_grad),
    "log_sigmoid": (lambda x: -np.logaddexp(0.0, -x), lambda x, y: _sigmoid_np(-x)),
    "sqrt": (_sqrt_fwd, lambda x, y: 0.5 / y),
    "square": (np.square, lambda x, y: 2.0 * x),
    "gelu": (_gelu_fwd, _gelu_grad),
}


def unary(name: str, x: Tensor) -> Tensor:
    fwd = UNARY_RULES[name][0]
    xd = x.data
    y = fwd(xd)

    def rule(g):
        return (g * UNARY_RULES[name][1](xd, y),)

    return _from_op(y, (x,), rule)


def exp(x):
    return unary("exp", x)


def log(x):
    return unary("log", x)


def sigmoid(x):
    return unary("sigmoid", x)


def tanh(x):
    return unary("tanh", x)


def abs(x):  # noqa: A001 - mirrors numpy naming
    return unary("abs", x)


def log_sigmoid(x):
    return unary("log_sigmoid", x)


def sqrt(x):
    return unary("sqrt", x)


def square(x):
    return unary("square", x)


def gelu(x):
    return unary("gelu", x)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _from_op(x.data * c, (x,), lambda g: (g * c,))


def max_with_scalar(x: Tensor, c: float) -> Tensor:
    """``max(x, c)`` elementwise; gradient flows only where ``x > c``."""
    c = float(c)
    keep = x.data > c
    return _from_op(np.where(keep, x.data, c), (x,), lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# binary elementwise
# ---------------------------------------------------------------------------

def _coerce(a, b):
    if not isinstance(a, Tensor):
        a = Tensor(a)
    if not isinstance(b, Tensor):
        b = Tensor(b)
    sa, sb = a.data.shape, b.data.shape
    if sa != sb and a.data.ndim != 0 and b.data.ndim != 0:
        raise ValueError(f"shape mismatch {list(sa)} vs {list(sb)} (only scalar broadcast is supported)")
    return a, b


def _fit(g: np.ndarray, shape: tuple) -> np.ndarray:
    # reduce a full-size gradient back onto a scalar operand
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def add(a, b) -> Tensor:
    a, b = _coerce(a, b)
    sa, sb = a.data.shape, b.data.shape
    return _from_op(a.data + b.data, (a, b), lambda g: (_fit(g, sa), _fit(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _coerce(a, b)
    sa, sb = a.data.shape, b.data.shape
    return _from_op(a.data - b.data, (a, b), lambda g: (_fit(g, sa), _fit(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _coerce(a, b)
    ad, bd = a.data, b.data

    def rule(g):
        return (
            _fit(g * bd, ad.shape) if a.requires_grad else None,
            _fit(g * ad, bd.shape) if b.requires_grad else None,
        )

    return _from_op(ad * bd, (a, b), rule)


def div(a, b) -> Tensor:
    a, b = _coerce(a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def rule(g):
        ga = _fit(g / bd, ad.shape) if a.requires_grad else None
        gb = _fit(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb

    return _from_op(out, (a, b), rule)


def maximum(a, b) -> Tensor:
    """Elementwise max; ties send the gradient to ``a``."""
    a, b = _coerce(a, b)
    take_a = a.data >= b.data
    out = np.where(take_a, a.data, b.data)
    return _from_op(
        out,
        (a, b),
        lambda g: (_fit(g * take_a, a.data.shape), _fit(g * ~take_a, b.data.shape)),
    )


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def _swap_last(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a [..., m, k] @ b [k, n]`` or batched ``a [..., m, k] @ b [..., k, n]``."""
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ValueError("matmul operands need at least 2 dimensions")
    if ad.shape[-1] != bd.shape[-2]:
        raise ValueError(f"inner dimensions differ: {list(ad.shape)} @ {list(bd.shape)}")
    if bd.ndim > 2 and ad.shape[:-2] != bd.shape[:-2]:
        raise ValueError(f"batch dimensions differ: {list(ad.shape)} @ {list(bd.shape)}")
    out = ad @ bd

    def rule(g):
        ga = g @ _swap_last(bd) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if bd.ndim == 2:
                k, n = bd.shape
                gb = ad.reshape(-1, k).T @ g.reshape(-1, n)
            else:
                gb = _swap_last(ad) @ g
        return ga, gb

    return _from_op(out, (a, b), rule)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map over the last axis: ``x [..., k] @ w [k, n] + b [n]``."""
    xd, wd = x.data, w.data
    if xd.shape[-1] != wd.shape[0]:
        raise ValueError(f"linear: input width {xd.shape[-1]} vs weight {list(wd.shape)}")
    out = xd @ wd
    if b is not None:
        out = out + b.data
    k, n = wd.shape

    def rule(g):
        gx = g @ wd.T if x.requires_grad else None
        gw = xd.reshape(-1, k).T @ g.reshape(-1, n) if w.requires_grad else None
        gb = g.reshape(-1, n).sum(axis=0) if b is not None and b.requires_grad else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return _from_op(out, parents, rule)


def head_matmul(h: Tensor, r: Tensor) -> Tensor:
    """Block-diagonal product: ``h [..., H*d]`` times per-head ``r [H, d, n]`` -> ``[..., H*n]``.

    Head ``j`` of the output depends only on head ``j`` of the input.
    """
    hd, rd = h.data, r.data
    nh, d, n = rd.shape
    if hd.shape[-1] != nh * d:
        raise ValueError(f"head_matmul: width {hd.shape[-1]} is not {nh}x{d}")
    lead = hd.shape[:-1]
    h3 = hd.reshape(-1, nh, d)
    bsz = h3.shape[0]
    out = np.einsum("bhd,hdn->bhn", h3, rd).reshape(*lead, nh * n)

    def rule(g):
        g3 = g.reshape(bsz, nh, n)
        gh = np.einsum("bhn,hdn->bhd", g3, rd).reshape(hd.shape) if h.requires_grad else None
        gr = np.einsum("bhd,bhn->hdn", h3, g3) if r.requires_grad else None
        return gh, gr

    return _from_op(out, (h, r), rule)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.data.shape
    return _from_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _from_op(np.ascontiguousarray(x.data.transpose(axes)), (x,), lambda g: (g.transpose(inv),))


def swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def getitem(x: Tensor, index) -> Tensor:
    """Basic (int / slice) indexing; the gradient is scattered back in place."""
    if isinstance(index, (list, np.ndarray)):
        raise TypeError("getitem supports basic indexing only; use take_rows for gathers")
    out = np.ascontiguousarray(x.data[index])
    return _from_op(out, (x,), lambda g: (IndexedGrad(index, g),))


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicit numpy-style broadcast; the backward rule sums over expanded axes."""
    shape = tuple(shape)
    src = x.data.shape
    out = np.ascontiguousarray(np.broadcast_to(x.data, shape))
    lead = len(shape) - len(src)
    expanded = tuple(i + lead for i, s in enumerate(src) if s == 1 and shape[i + lead] != 1)

    def rule(g):
        if lead:
            g = g.sum(axis=tuple(range(lead)))
        if expanded:
            g = g.sum(axis=tuple(i - lead for i in expanded), keepdims=True)
        return (g,)

    return _from_op(out, (x,), rule)


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    out = np.concatenate([t.data for t in xs], axis=axis)
    bounds = np.cumsum([t.data.shape[axis] for t in xs])[:-1]
    return _from_op(out, tuple(xs), lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    out = np.stack([t.data for t in xs], axis=axis)
    n = len(xs)

    def rule(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return _from_op(out, tuple(xs), rule)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for a in axes:
        if not -ndim <= a < ndim:
            raise ValueError(f"axis {a} is invalid for a {ndim}-d tensor")
        out.append(a % ndim)
    return tuple(out)


def _expand_back(g, shape, axes, keepdims):
    if axes is None:
        return np.broadcast_to(np.reshape(g, (1,) * len(shape)), shape)
    if not keepdims:
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axis(axis, x.ndim)
    shape = x.data.shape
    out = np.asarray(x.data.sum(axis=axes, keepdims=keepdims))
    return _from_op(out, (x,), lambda g: (_expand_back(g, shape, axes, keepdims),))


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    shape = x.data.shape
    count = x.data.size if axes is None else math.prod(shape[a] for a in axes)
    out = np.asarray(x.data.mean(axis=axes, keepdims=keepdims))
    return _from_op(out, (x,), lambda g: (_expand_back(g / count, shape, axes, keepdims),))


def max(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    """Maximum along ``axis``; ties send the gradient to every maximal entry equally."""
    axes = _norm_axis(axis, x.ndim)
    shape = x.data.shape
    m = x.data.max(axis=axes, keepdims=True)
    hit = x.data == m
    share = hit / hit.sum(axis=axes, keepdims=True)
    out = np.asarray(m if keepdims else (m.reshape(()) if axes is None else np.squeeze(m, axes)))

    def rule(g):
        return (_expand_back(g, shape, axes, keepdims) * share,)

    return _from_op(out, (x,), rule)


def frobenius_norm(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """``sqrt(sum(x**2))`` over ``axis`` (all axes by default).

    The subgradient at a zero-norm slice is taken as zero.
    """
    axes = _norm_axis(axis, x.ndim)
    xd = x.data
    shape = xd.shape
    nrm_k = np.sqrt(np.sum(xd * xd, axis=axes, keepdims=True))
    out = np.asarray(nrm_k if keepdims else (nrm_k.reshape(()) if axes is None else np.squeeze(nrm_k, axes)))

    def rule(g):
        safe = np.where(nrm_k > 0, nrm_k, 1.0)
        gk = _expand_back(g, shape, axes, keepdims)
        return (gk * np.where(nrm_k > 0, xd / safe, 0.0),)

    return _from_op(out, (x,), rule)


# ---------------------------------------------------------------------------
# softmax family
# ---------------------------------------------------------------------------

def _check_temperature(temperature: float) -> float:
    temperature = float(temperature)
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    return temperature


def softmax_np(x: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    # one allocation, then in place: these rows can be S x S attention scores
    z = x - x.max(axis=-1, keepdims=True)
    if temperature != 1.0:
        z *= 1.0 / temperature
    np.exp(z, out=z)
    z /= z.sum(axis=-1, keepdims=True)
    return z


def log_softmax_np(x: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    z = x / temperature
    m = z.max(axis=-1, keepdims=True)
    z = z - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_rows(x: Tensor, temperature: float = 1.0) -> Tensor:
    """Softmax of ``x / temperature`` along the last axis (max-subtracted)."""
    temperature = _check_temperature(temperature)
    y = softmax_np(x.data, temperature)

    def rule(g):
        return ((g - (g * y).sum(axis=-1, keepdims=True)) * y / temperature,)

    return _from_op(y, (x,), rule)


def log_softmax_rows(x: Tensor, temperature: float = 1.0) -> Tensor:
    """Log-softmax of ``x / temperature`` along the last axis via log-sum-exp."""
    temperature = _check_temperature(temperature)
    y = log_softmax_np(x.data, temperature)

    def rule(g):
        p = np.exp(y)
        return ((g - p * g.sum(axis=-1, keepdims=True)) / temperature,)

    return _from_op(y, (x,), rule)


# ---------------------------------------------------------------------------
# indexing / masking / normalisation
# ---------------------------------------------------------------------------

def masked_fill(x: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``mask`` is true by a constant; they get no gradient."""
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.data.shape)
    out = np.where(mask, value, x.data)
    return _from_op(out, (x,), lambda g: (np.where(mask, 0.0, g),))


def take_rows(w: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows ``w[ids]`` (embedding lookup); repeated ids accumulate."""
    ids = np.asarray(ids, dtype=np.int64)
    nrows = w.data.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= nrows):
        raise IndexError(f"row id out of range [0, {nrows})")
    out = w.data[ids]

    def rule(g):
        gw = np.zeros_like(w.data)
        np.add.at(gw, ids.reshape(-1), g.reshape(-1, *w.data.shape[1:]))
        return (gw,)

    return _from_op(out, (w,), rule)


def pick_last(x: Tensor, ids: np.ndarray) -> Tensor:
    """``out[...] = x[..., ids[...]]``: one entry per row of the last axis."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.shape != x.data.shape[:-1]:
        raise ValueError(f"ids shape {list(ids.shape)} must equal {list(x.data.shape[:-1])}")
    n = x.data.shape[-1]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"class id out of range [0, {n})")
    idx = ids[..., None]
    out = np.take_along_axis(x.data, idx, axis=-1)[..., 0]

    def rule(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx, g[..., None], axis=-1)
        return (gx,)

    return _from_op(out, (x,), rule)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    n = xd.shape[-1]

    def rule(g):
        gxhat = g * gamma.data
        gx = None
        if x.requires_grad:
            gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                        - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        gg = (g * xhat).reshape(-1, n).sum(axis=0) if gamma.requires_grad else None
        gb = g.reshape(-1, n).sum(axis=0) if beta.requires_grad else None
        return gx, gg, gb

    return _from_op(out, (x, gamma, beta), rule)
