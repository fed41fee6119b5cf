"""Differentiable primitives.

Broadcasting is restricted to trailing-dimension alignment: the smaller operand's
shape must equal the trailing part of the larger one's (or be a scalar).  That
keeps every backward a plain sum over leading axes.
"""

from __future__ import annotations

import math

import numpy as np

from .segments import PairList, SegmentMap
from .tensor import NumericError, Tensor, as_tensor, make_result


class DimensionError(ValueError):
    pass


_GELU_C = math.sqrt(2.0 / math.pi)


def _operands(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    small, big = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    if small != big[len(big) - len(small):]:
        raise DimensionError(f"shapes {sa} and {sb} are not trailing-aligned")
    return a, b


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead))).reshape(shape)


def add(a, b) -> Tensor:
    a, b = _operands(a, b)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return make_result(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _operands(a, b)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(-_unbroadcast(g, b.shape))

    return make_result(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _operands(a, b)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return make_result(a.data * b.data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} @ {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accum(g @ b.data.T)
        if b.requires_grad:
            b._accum(a.data.T @ g)

    return make_result(a.data @ b.data, (a, b), backward)


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximated GELU."""
    x = as_tensor(x)
    xd = x.data
    inner = _GELU_C * (xd + 0.044715 * xd**3)
    t = np.tanh(inner)

    def backward(g):
        dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * xd * xd)
        x._accum(g * (0.5 * (1.0 + t) + 0.5 * xd * dt))

    return make_result(0.5 * xd * (1.0 + t), (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(xd))
    out = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(xd.dtype, copy=False)

    def backward(g):
        x._accum(g * out * (1.0 - out))

    return make_result(out, (x,), backward)


def concat_lastdim(*xs: Tensor) -> Tensor:
    xs = tuple(as_tensor(x) for x in xs)
    lead = xs[0].shape[:-1]
    for x in xs[1:]:
        if x.shape[:-1] != lead:
            raise DimensionError(f"concat needs equal leading dims, got {[x.shape for x in xs]}")
    widths = [x.shape[-1] for x in xs]
    bounds = np.cumsum([0] + widths)

    def backward(g):
        for x, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
            if x.requires_grad:
                x._accum(g[..., lo:hi])

    return make_result(np.concatenate([x.data for x in xs], axis=-1), xs, backward)


def elementwise(x, kind: str, other=None) -> Tensor:
    """Dispatch for the pointwise family: gelu, sigmoid, mul, add, concat_lastdim."""
    if kind == "gelu":
        return gelu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "mul":
        return mul(x, other)
    if kind == "add":
        return add(x, other)
    if kind == "concat_lastdim":
        return concat_lastdim(x, other)
    raise ValueError(f"unknown elementwise kind {kind!r}")


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        x._accum(g.reshape(x.shape))

    return make_result(x.data.reshape(shape), (x,), backward)


def repeat_cols(x: Tensor, reps: int) -> Tensor:
    """[N, H] -> [N, H*reps], each column repeated ``reps`` times in place."""
    x = as_tensor(x)
    n, h = x.shape

    def backward(g):
        x._accum(g.reshape(n, h, reps).sum(axis=2))

    return make_result(np.repeat(x.data, reps, axis=1), (x,), backward)


def total(x: Tensor) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        x._accum(np.broadcast_to(g, x.shape))

    return make_result(np.asarray(x.data.sum(), dtype=x.dtype), (x,), backward)


def mean(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return mul(total(x), 1.0 / x.data.size)


def softmax_rows(x: Tensor) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[1] < 1:
        raise DimensionError(f"softmax_rows needs [m, n>=1], got {x.shape}")
    if not np.all(np.isfinite(x.data)):
        raise NumericError("softmax_rows on non-finite input")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        x._accum(out * (g - (g * out).sum(axis=1, keepdims=True)))

    return make_result(out, (x,), backward)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under row softmax."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[0]
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    loss = (lse - z[np.arange(n), labels]).mean()
    if not np.isfinite(loss):
        raise NumericError("cross-entropy is not finite")

    def backward(g):
        p = np.exp(z - lse[:, None])
        p[np.arange(n), labels] -= 1.0
        logits._accum(p * (g / n))

    return make_result(np.asarray(loss, dtype=logits.dtype), (logits,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization over the last axis followed by an affine map.

    A single-channel row has zero variance, so it normalizes to zero and the
    result is just ``bias``.
    """
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm affine must be ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def backward(g):
        if gain.requires_grad:
            gain._accum((g * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad:
            bias._accum(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gx = g * gain.data
            x._accum(inv * (gx - gx.mean(axis=-1, keepdims=True)
                            - xhat * (gx * xhat).mean(axis=-1, keepdims=True)))

    return make_result(xhat * gain.data + bias.data, (x, gain, bias), backward)


def gather_rows(x: Tensor, idx) -> Tensor:
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        x._accum(full)

    return make_result(x.data[idx], (x,), backward)


def weighted_gather(x: Tensor, idx, weights) -> Tensor:
    """out[m] = sum_j weights[m, j] * x[idx[m, j]] with constant weights."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    w = np.asarray(weights, dtype=x.dtype)
    if idx.shape != w.shape:
        raise DimensionError("index and weight shapes differ")
    out = np.einsum("mk,mkc->mc", w, x.data[idx])

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx.reshape(-1), (w[:, :, None] * g[:, None, :]).reshape(-1, x.shape[1]))
        x._accum(full)

    return make_result(out, (x,), backward)


def segmented_reduce(x: Tensor, seg: SegmentMap, kind: str = "mean") -> Tensor:
    """Reduce rows of ``x`` per segment in ascending-index order.

    Empty segments come out as zero rows (see ``seg.empty``).  The mean is
    taken around each segment's first row, so a segment of identical rows
    reproduces that row bit-exactly.
    """
    x = as_tensor(x)
    if len(seg) != x.shape[0]:
        raise DimensionError(f"segment map covers {len(seg)} rows, tensor has {x.shape[0]}")
    if kind not in ("mean", "sum", "max"):
        raise ValueError(f"unknown reduction {kind!r}")
    xs = x.data[seg.order]
    counts = seg.counts
    live = np.flatnonzero(counts > 0)
    starts = seg.offsets[live]
    out = np.zeros((seg.num_segments,) + x.shape[1:], dtype=x.dtype)
    sorted_seg = seg.ids[seg.order]

    if kind == "sum":
        if live.size:
            out[live] = np.add.reduceat(xs, starts, axis=0)

        def backward(g):
            x._accum(g[seg.ids])

    elif kind == "mean":
        if live.size:
            ref = xs[starts]
            shifted = xs - ref[np.repeat(np.arange(live.size), counts[live])]
            cnt = counts[live].reshape((-1,) + (1,) * (x.ndim - 1)).astype(x.dtype)
            out[live] = ref + np.add.reduceat(shifted, starts, axis=0) / cnt
        inv = np.zeros(seg.num_segments, dtype=x.dtype)
        inv[live] = 1.0 / counts[live]

        def backward(g):
            scale = inv[seg.ids].reshape((-1,) + (1,) * (x.ndim - 1))
            x._accum(g[seg.ids] * scale)

    else:
        if live.size:
            out[live] = np.maximum.reduceat(xs, starts, axis=0)
        # first row (in index order) attaining the max receives the gradient
        pos = np.arange(xs.shape[0]).reshape((-1,) + (1,) * (x.ndim - 1))
        hit = xs == out[sorted_seg]
        cand = np.where(hit, pos, xs.shape[0])
        winner = np.zeros(out.shape, dtype=np.int64)
        if live.size:
            winner[live] = np.minimum.reduceat(cand, starts, axis=0)

        def backward(g):
            gs = np.zeros_like(xs)
            if live.size:
                w = winner[live]
                cols = np.indices(w.shape)[1:]
                gs[(w,) + tuple(cols)] = g[live]
            full = np.zeros_like(x.data)
            full[seg.order] = gs
            x._accum(full)

    return make_result(out, (x,), backward)


def segment_attention(q: Tensor, k: Tensor, v: Tensor, pairs: PairList, heads: int,
                      bias: Tensor | None = None) -> Tensor:
    """Multi-head scaled dot-product attention over a sparse pair list.

    ``q`` is [Nq, C], ``k`` and ``v`` are [Nk, C] with C = heads * d; head h
    owns columns h*d:(h+1)*d.  Each query attends only to its listed keys.
    Scores are scaled by 1/sqrt(d); an optional per-pair, per-head ``bias``
    [P, heads] is added after scaling.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if bias is not None and bias.shape != (len(pairs), heads):
        raise DimensionError(f"bias must be [{len(pairs)}, {heads}], got {bias.shape}")
    nq, c = q.shape
    if k.shape[1] != c or v.shape != k.shape or c % heads:
        raise DimensionError(f"attention shapes q{q.shape} k{k.shape} v{v.shape} heads={heads}")
    if pairs.num_queries != nq or pairs.num_keys != k.shape[0]:
        raise DimensionError("pair list does not match query/key counts")
    d = c // heads
    scale = 1.0 / math.sqrt(d)
    qi, kj = pairs.q_idx, pairs.k_idx
    starts = pairs.offsets[:-1]
    Q = q.data.reshape(nq, heads, d)
    K = k.data.reshape(-1, heads, d)
    V = v.data.reshape(-1, heads, d)
    Qp, Kp, Vp = Q[qi], K[kj], V[kj]
    s = np.einsum("phd,phd->ph", Qp, Kp) * scale
    if bias is not None:
        s = s + bias.data
    m = np.maximum.reduceat(s, starts, axis=0)
    e = np.exp(s - m[qi])
    a = e / np.add.reduceat(e, starts, axis=0)[qi]
    out = np.add.reduceat(a[:, :, None] * Vp, starts, axis=0)

    def backward(g):
        G = g.reshape(nq, heads, d)
        Gp = G[qi]
        if v.requires_grad:
            dv = np.zeros_like(V)
            np.add.at(dv, kj, a[:, :, None] * Gp)
            v._accum(dv.reshape(v.shape))
        if q.requires_grad or k.requires_grad or (bias is not None and bias.requires_grad):
            da = np.einsum("phd,phd->ph", Gp, Vp)
            ds = a * (da - np.add.reduceat(a * da, starts, axis=0)[qi])
            if bias is not None and bias.requires_grad:
                bias._accum(ds)
            ds = ds * scale
            if q.requires_grad:
                q._accum(np.add.reduceat(ds[:, :, None] * Kp, starts, axis=0).reshape(q.shape))
            if k.requires_grad:
                dk = np.zeros_like(K)
                np.add.at(dk, kj, ds[:, :, None] * Qp)
                k._accum(dk.reshape(k.shape))

    parents = (q, k, v) if bias is None else (q, k, v, bias)
    return make_result(out.reshape(nq, c), parents, backward)
