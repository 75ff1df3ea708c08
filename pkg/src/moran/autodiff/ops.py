"""Differentiable operations recorded on the active tape.

Convolutions are im2col + BLAS matmul; pooling, grid sampling and the
recurrent gate math dispatch to the selected kernel backend. Backward
closures hand freshly-allocated arrays to `accum` (pass-through gradients
are copied) so gradient buffers never alias each other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..backend import kernels as K
from .engine import Tensor, accum, as_tensor, needs_grad, record

LOG_FLOOR = 1e-12  # probability clamp inside nll_loss


def _pair(v):
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


def _unbroadcast(g, shape):
    if g.shape == tuple(shape):
        return g.copy()
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g if g.base is None else g.copy()


# ---------------------------------------------------------------------------
# elementwise / structural


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data)

    def backward(g):
        if needs_grad(a):
            accum(a, _unbroadcast(g, a.shape))
        if needs_grad(b):
            accum(b, _unbroadcast(g, b.shape))

    return record(out, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data)

    def backward(g):
        if needs_grad(a):
            accum(a, _unbroadcast(g, a.shape))
        if needs_grad(b):
            accum(b, _unbroadcast(-g, b.shape))

    return record(out, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data)

    def backward(g):
        if needs_grad(a):
            accum(a, _unbroadcast(g * b.data, a.shape))
        if needs_grad(b):
            accum(b, _unbroadcast(g * a.data, b.shape))

    return record(out, (a, b), backward)


def neg(a):
    out = Tensor(-a.data)

    def backward(g):
        if needs_grad(a):
            accum(a, -g)

    return record(out, (a,), backward)


def tsum(x, axis=None, keepdims=False):
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if not needs_grad(x):
            return
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        accum(x, np.broadcast_to(g, x.shape).copy())

    return record(out, (x,), backward)


def reshape(x, shape):
    out = Tensor(x.data.reshape(shape))

    def backward(g):
        if needs_grad(x):
            accum(x, g.reshape(x.shape).copy())

    return record(out, (x,), backward)


def transpose(x, axes):
    out = Tensor(np.ascontiguousarray(x.data.transpose(axes)))
    inv = np.argsort(axes)

    def backward(g):
        if needs_grad(x):
            accum(x, np.ascontiguousarray(g.transpose(inv)))

    return record(out, (x,), backward)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]

    def backward(g):
        start = 0
        for t, s in zip(tensors, sizes):
            if needs_grad(t):
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(start, start + s)
                accum(t, g[tuple(sl)].copy())
            start += s

    return record(out, tuple(tensors), backward)


def clamp(x, lo, hi):
    out = Tensor(np.clip(x.data, lo, hi))
    mask = (x.data > lo) & (x.data < hi)

    def backward(g):
        if needs_grad(x):
            accum(x, g * mask)

    return record(out, (x,), backward)


# ---------------------------------------------------------------------------
# activations


def relu(x):
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0))

    def backward(g):
        if needs_grad(x):
            accum(x, g * mask)

    return record(out, (x,), backward)


def tanh(x):
    y = np.tanh(x.data)
    out = Tensor(y)

    def backward(g):
        if needs_grad(x):
            accum(x, g * (1 - y * y))

    return record(out, (x,), backward)


def sigmoid(x):
    y = 1.0 / (1.0 + np.exp(-np.clip(x.data, -60.0, 60.0)))
    out = Tensor(y)

    def backward(g):
        if needs_grad(x):
            accum(x, g * y * (1 - y))

    return record(out, (x,), backward)


def activation(x, kind: str):
    try:
        return {"relu": relu, "tanh": tanh, "sigmoid": sigmoid}[kind](x)
    except KeyError:
        raise ValueError(f"unknown activation kind {kind!r}") from None


def softmax(x, axis=-1):
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"softmax: axis {axis} invalid for {x.ndim}-d input")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def backward(g):
        if needs_grad(x):
            accum(x, (g - (g * y).sum(axis=axis, keepdims=True)) * y)

    return record(out, (x,), backward)


# ---------------------------------------------------------------------------
# affine


def linear(x, w, b=None):
    din = x.shape[-1]
    if w.shape[1] != din:
        raise ValueError(f"linear: input dim {din} != weight dim {w.shape[1]}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, din)
    y2 = x2 @ w.data.T
    if b is not None:
        y2 += b.data
    out = Tensor(y2.reshape(*lead, w.shape[0]))

    def backward(g):
        g2 = g.reshape(-1, w.shape[0])
        if b is not None and needs_grad(b):
            accum(b, g2.sum(axis=0))
        if needs_grad(w):
            accum(w, g2.T @ x2)
        if needs_grad(x):
            accum(x, (g2 @ w.data).reshape(x.shape))

    return record(out, (x, w) if b is None else (x, w, b), backward)


# ---------------------------------------------------------------------------
# convolution / pooling


def conv2d(x, w, b, stride: int = 1, padding: int = 0):
    if x.ndim != 4:
        raise ValueError(f"conv2d: input must be 4-d, got {x.ndim}-d")
    n, c, h, wd = x.shape
    f, cw, kh, kw = w.shape
    if cw != c:
        raise ValueError(f"conv2d: input channels {c} != weight channels {cw}")
    if b.shape != (f,):
        raise ValueError(f"conv2d: bias shape {b.shape} != ({f},)")
    s, p = int(stride), int(padding)
    if s < 1 or kh < 1 or p < 0:
        raise ValueError("conv2d: stride/kernel must be >= 1 and padding >= 0")
    if (h + 2 * p - kh) % s or (wd + 2 * p - kw) % s:
        raise ValueError(f"conv2d: window k{kh} s{s} p{p} does not tile {h}x{wd} input")
    ho = (h + 2 * p - kh) // s + 1
    wo = (wd + 2 * p - kw) // s + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d: empty {ho}x{wo} output")

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    cols = K.im2col(xp, kh, kw, s, s, ho, wo)
    w2 = w.data.reshape(f, -1)
    y = cols @ w2.T
    y += b.data
    out = Tensor(np.ascontiguousarray(y.reshape(n, ho, wo, f).transpose(0, 3, 1, 2)))
    saved_cols = cols if needs_grad(w) else None

    def backward(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, f)
        if needs_grad(b):
            accum(b, g2.sum(axis=0))
        if saved_cols is not None:
            accum(w, (g2.T @ saved_cols).reshape(w.shape))
        if needs_grad(x):
            dcols = g2 @ w2
            dxp = K.col2im(dcols, n, c, h + 2 * p, wd + 2 * p, kh, kw, s, s, ho, wo)
            if p:
                dxp = dxp[:, :, p:-p, p:-p]
            accum(x, np.ascontiguousarray(dxp))

    return record(out, (x, w, b), backward)


def maxpool2d(x, k: int, stride=None, padding=0):
    if x.ndim != 4:
        raise ValueError(f"maxpool2d: input must be 4-d, got {x.ndim}-d")
    kh, kw = _pair(k)
    sh, sw = _pair(stride if stride is not None else k)
    ph, pw = _pair(padding)
    n, c, h, w = x.shape
    if ph >= kh or pw >= kw:
        raise ValueError(f"maxpool2d: padding {ph}x{pw} must be smaller than kernel {kh}x{kw}")
    if h + 2 * ph < kh or w + 2 * pw < kw:
        raise ValueError(f"maxpool2d: window {kh}x{kw} exceeds padded input {h + 2 * ph}x{w + 2 * pw}")
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"maxpool2d: empty {ho}x{wo} output")
    y, idx = K.maxpool_fwd(x.data, kh, kw, sh, sw, ph, pw)
    out = Tensor(y)

    def backward(g):
        if needs_grad(x):
            accum(x, K.maxpool_bwd(g, idx, h, w))

    return record(out, (x,), backward)


def avgpool2d(x, k: int, stride=None):
    if x.ndim != 4:
        raise ValueError(f"avgpool2d: input must be 4-d, got {x.ndim}-d")
    kh, kw = _pair(k)
    sh, sw = _pair(stride if stride is not None else k)
    n, c, h, w = x.shape
    if h < kh or w < kw:
        raise ValueError(f"avgpool2d: window {kh}x{kw} exceeds input {h}x{w}")
    ho = (h - kh) // sh + 1
    wo = (w - kw) // sw + 1
    cols = K.im2col(x.data, kh, kw, sh, sw, ho, wo)
    y = cols.reshape(-1, c, kh * kw).mean(axis=-1)
    out = Tensor(np.ascontiguousarray(y.reshape(n, ho, wo, c).transpose(0, 3, 1, 2)))

    def backward(g):
        if needs_grad(x):
            g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, c, 1)
            dcols = np.broadcast_to(g2 / (kh * kw), (g2.shape[0], c, kh * kw))
            dx = K.col2im(dcols.reshape(-1, c * kh * kw).copy(), n, c, h, w, kh, kw, sh, sw, ho, wo)
            accum(x, dx)

    return record(out, (x,), backward)


# ---------------------------------------------------------------------------
# batch normalization


@dataclass
class BnState:
    """Running statistics of one batchnorm layer (mutated in train mode)."""

    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def create(cls, channels: int, dtype=np.float64):
        if channels < 1:
            raise ValueError("batchnorm2d: channel count must be >= 1")
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype))


def batchnorm2d(x, gamma, beta, state: BnState, mode: str = "train",
                momentum: float = 0.1, eps: float = 1e-5):
    if x.ndim != 4:
        raise ValueError(f"batchnorm2d: input must be 4-d, got {x.ndim}-d")
    n, c, h, w = x.shape
    if c < 1:
        raise ValueError("batchnorm2d: zero channels")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"batchnorm2d: gamma/beta must have shape ({c},)")
    if mode not in ("train", "eval"):
        raise ValueError(f"batchnorm2d: mode must be train|eval, got {mode!r}")

    if mode == "train":
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        state.mean = (1 - momentum) * state.mean + momentum * mu
        state.var = (1 - momentum) * state.var + momentum * var
    else:
        mu = state.mean.astype(x.dtype)
        var = state.var.astype(x.dtype)
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[:, None, None]) * invstd[:, None, None]
    out = Tensor(gamma.data[:, None, None] * xhat + beta.data[:, None, None])

    def backward(g):
        if needs_grad(beta):
            accum(beta, g.sum(axis=(0, 2, 3)))
        if needs_grad(gamma):
            accum(gamma, (g * xhat).sum(axis=(0, 2, 3)))
        if needs_grad(x):
            dxhat = g * gamma.data[:, None, None]
            if mode == "train":
                m = n * h * w
                t1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
                t2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
                dx = (dxhat - t1 / m - xhat * t2 / m) * invstd[:, None, None]
            else:
                dx = dxhat * invstd[:, None, None]
            accum(x, dx)

    return record(out, (x, gamma, beta), backward)


def bn_relu(x, gamma, beta, state: BnState, mode: str = "train",
            momentum: float = 0.1, eps: float = 1e-5):
    """Fused batchnorm + relu (one kernel pass each way).

    Matches batchnorm2d followed by relu; the nets use this form because the
    separate ops spend most of their time re-walking the activation maps."""
    if x.ndim != 4:
        raise ValueError(f"bn_relu: input must be 4-d, got {x.ndim}-d")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"bn_relu: gamma/beta must have shape ({c},)")
    if mode not in ("train", "eval"):
        raise ValueError(f"bn_relu: mode must be train|eval, got {mode!r}")
    m = n * h * w
    if mode == "train":
        s1, s2 = K.channel_stats(x.data)
        mu64 = s1 / m
        var64 = np.maximum(s2 / m - mu64 * mu64, 0.0)
        state.mean = ((1 - momentum) * state.mean + momentum * mu64).astype(state.mean.dtype)
        state.var = ((1 - momentum) * state.var + momentum * var64).astype(state.var.dtype)
    else:
        mu64 = state.mean.astype(np.float64)
        var64 = state.var.astype(np.float64)
    mu = mu64.astype(x.dtype)
    invstd = (1.0 / np.sqrt(var64 + eps)).astype(x.dtype)
    y = K.bn_relu_fwd(x.data, gamma.data, beta.data, mu, invstd)
    out = Tensor(y)
    train = mode == "train"

    def backward(g):
        need_x = needs_grad(x)
        ng, nb = needs_grad(gamma), needs_grad(beta)
        if not (need_x or ng or nb):
            return
        dgamma, dbeta, t1, t2 = K.bn_relu_bwd_stats(x.data, g, y, gamma.data, mu, invstd)
        if ng:
            accum(gamma, dgamma.astype(x.dtype))
        if nb:
            accum(beta, dbeta.astype(x.dtype))
        if need_x:
            dx = K.bn_relu_bwd_dx(x.data, g, y, gamma.data, mu, invstd,
                                  t1.astype(x.dtype), t2.astype(x.dtype),
                                  float(m), train)
            accum(x, dx)

    return record(out, (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# resampling


_resize_cache: dict = {}


def _axis_matrix(src: int, dst: int, dtype):
    key = (src, dst, np.dtype(dtype).str)
    m = _resize_cache.get(key)
    if m is None:
        m = np.zeros((dst, src), dtype=np.float64)
        for i in range(dst):
            pos = i * (src - 1) / (dst - 1) if dst > 1 else 0.0
            i0 = min(int(np.floor(pos)), src - 2) if src > 1 else 0
            frac = pos - i0
            m[i, i0] += 1 - frac
            if src > 1:
                m[i, i0 + 1] += frac
        m = m.astype(dtype)
        _resize_cache[key] = m
    return m


def bilinear_resize(x, target):
    """Align-corners bilinear resize of the trailing two axes."""
    if x.ndim not in (3, 4):
        raise ValueError(f"bilinear_resize: input must be 3-d or 4-d, got {x.ndim}-d")
    ht, wt = int(target[0]), int(target[1])
    if ht < 1 or wt < 1:
        raise ValueError(f"bilinear_resize: bad target size {ht}x{wt}")
    h, w = x.shape[-2], x.shape[-1]
    rm = _axis_matrix(h, ht, x.dtype)
    cm = _axis_matrix(w, wt, x.dtype)
    out = Tensor(np.matmul(rm, x.data) @ cm.T)

    def backward(g):
        if needs_grad(x):
            accum(x, np.matmul(rm.T, g) @ cm)

    return record(out, (x,), backward)


def grid_sample(image, coords):
    """Bilinear lookup of `image` at pixel coordinates (rows, cols).

    coords[..., 0, :, :] holds row positions, coords[..., 1, :, :] column
    positions; both clamped to the image rectangle before interpolation.
    """
    batched = image.ndim == 4
    if not batched and image.ndim != 3:
        raise ValueError(f"grid_sample: image must be 3-d or 4-d, got {image.ndim}-d")
    if coords.ndim != image.ndim:
        raise ValueError("grid_sample: image and coords must both be batched or both not")
    if coords.shape[-3] != 2:
        raise ValueError(f"grid_sample: coords must have 2 channels, got {coords.shape[-3]}")
    if batched and coords.shape[0] != image.shape[0]:
        raise ValueError(f"grid_sample: batch {coords.shape[0]} != image batch {image.shape[0]}")

    img = image.data if batched else image.data[None]
    crd = coords.data if batched else coords.data[None]
    rows = np.ascontiguousarray(crd[:, 0])
    cols = np.ascontiguousarray(crd[:, 1])
    y = K.grid_sample_fwd(img, rows, cols)
    out = Tensor(y if batched else y[0])

    def backward(g):
        need_img, need_crd = needs_grad(image), needs_grad(coords)
        if not (need_img or need_crd):
            return
        g4 = g if batched else g[None]
        gimg, grows, gcols = K.grid_sample_bwd(img, rows, cols, np.ascontiguousarray(g4))
        if need_img:
            accum(image, gimg if batched else gimg[0])
        if need_crd:
            gc = np.stack([grows, gcols], axis=1)
            accum(coords, gc if batched else gc[0])

    return record(out, (image, coords), backward)


# ---------------------------------------------------------------------------
# recurrent layers


@dataclass
class LstmDirParams:
    w: Tensor  # (4h, d_in) gate order i, f, g, o
    r: Tensor  # (4h, h)
    b: Tensor  # (4h,)


@dataclass
class BilstmParams:
    fwd: LstmDirParams
    bwd: LstmDirParams


def bilstm(x, params: BilstmParams, merge: str = "concat"):
    """Bidirectional LSTM over a (N, L, D) or (L, D) sequence, zero initial state."""
    if merge not in ("concat", "sum"):
        raise ValueError(f"bilstm: merge must be concat|sum, got {merge!r}")
    batched = x.ndim == 3
    if not batched and x.ndim != 2:
        raise ValueError(f"bilstm: input must be 2-d or 3-d, got {x.ndim}-d")
    x3 = np.ascontiguousarray(x.data if batched else x.data[None])
    n, l, din = x3.shape
    hdim = params.fwd.r.shape[1]
    x2 = x3.reshape(n * l, din)
    runs = []
    outs = []
    for p, reverse in ((params.fwd, False), (params.bwd, True)):
        pre = np.ascontiguousarray((x2 @ p.w.data.T + p.b.data).reshape(n, l, 4 * hdim))
        rt = np.ascontiguousarray(p.r.data.T)
        hs, acts, tcs, cs = K.lstm_seq_fwd(pre, rt, reverse)
        runs.append((p, reverse, hs, acts, tcs, cs))
        outs.append(hs)
    y = np.concatenate(outs, axis=-1) if merge == "concat" else outs[0] + outs[1]
    out = Tensor(y if batched else y[0])

    def backward(g):
        g3 = g if batched else g[None]
        if merge == "concat":
            gparts = (g3[..., :hdim], g3[..., hdim:])
        else:
            gparts = (g3, g3)
        dx_total = None
        for (p, reverse, hs, acts, tcs, cs), gd in zip(runs, gparts):
            dpre = K.lstm_seq_bwd(np.ascontiguousarray(gd), acts, tcs, cs,
                                  np.ascontiguousarray(p.r.data), reverse)
            d2 = dpre.reshape(n * l, 4 * hdim)
            if needs_grad(p.w):
                accum(p.w, d2.T @ x2)
            if needs_grad(p.b):
                accum(p.b, d2.sum(axis=0))
            if needs_grad(p.r):
                # recurrent grad sums dg_t^T h_{t-1}; assemble the shifted
                # state sequence once and take a single matmul
                hprev = np.zeros_like(hs)
                if reverse:
                    hprev[:, :-1] = hs[:, 1:]
                else:
                    hprev[:, 1:] = hs[:, :-1]
                accum(p.r, d2.T @ hprev.reshape(n * l, hdim))
            if needs_grad(x):
                dx = d2 @ p.w.data
                dx_total = dx if dx_total is None else dx_total + dx
        if needs_grad(x):
            dx3 = dx_total.reshape(n, l, din)
            accum(x, dx3 if batched else dx3[0])

    ins = (x, params.fwd.w, params.fwd.r, params.fwd.b,
           params.bwd.w, params.bwd.r, params.bwd.b)
    return record(out, ins, backward)


@dataclass
class GruParams:
    w: Tensor  # (3h, d_in) gate order z, r, n
    r: Tensor  # (3h, h)
    b: Tensor  # (3h,)


def gru_cell(x, s_prev, params: GruParams):
    """One GRU step: s' = (1-z) * s_prev + z * candidate."""
    batched = x.ndim == 2
    xd = x.data if batched else x.data[None]
    sd = s_prev.data if batched else s_prev.data[None]
    if params.w.shape[1] != xd.shape[1]:
        raise ValueError(f"gru_cell: input dim {xd.shape[1]} != weight dim {params.w.shape[1]}")
    if params.r.shape[1] != sd.shape[1]:
        raise ValueError(f"gru_cell: state dim {sd.shape[1]} != weight dim {params.r.shape[1]}")
    gx = xd @ params.w.data.T + params.b.data
    gs = sd @ params.r.data.T
    s_new, z, r, n, gsn = K.gru_gates_fwd(gx, gs, sd)
    out = Tensor(s_new if batched else s_new[0])

    def backward(g):
        g2 = g if batched else g[None]
        dgx, dgs, ds_direct = K.gru_gates_bwd(np.ascontiguousarray(g2), z, r, n, gsn, sd)
        if needs_grad(params.b):
            accum(params.b, dgx.sum(axis=0))
        if needs_grad(params.w):
            accum(params.w, dgx.T @ xd)
        if needs_grad(params.r):
            accum(params.r, dgs.T @ sd)
        if needs_grad(x):
            dx = dgx @ params.w.data
            accum(x, dx if batched else dx[0])
        if needs_grad(s_prev):
            ds = ds_direct + dgs @ params.r.data
            accum(s_prev, ds if batched else ds[0])

    return record(out, (x, s_prev, params.w, params.r, params.b), backward)


# ---------------------------------------------------------------------------
# lookups and loss


def embedding(index, table):
    """Row lookup; gradients accumulate into the selected rows only."""
    v = table.shape[0]
    idx = np.asarray(index)
    if idx.ndim > 1:
        raise ValueError("embedding: index must be a scalar or 1-d")
    if idx.size and (idx.min() < 0 or idx.max() >= v):
        raise ValueError(f"embedding: index out of range [0, {v})")
    out = Tensor(table.data[idx].copy())

    def backward(g):
        if needs_grad(table):
            dt = np.zeros_like(table.data)
            np.add.at(dt, idx, g)
            accum(table, dt)

    return record(out, (table,), backward)


def nll_loss(probabilities, target):
    """Negative log of the target-class probability (clamped at 1e-12).

    Vector input + scalar target gives a scalar; matrix input + target
    vector gives one loss per row.
    """
    p = probabilities
    if p.ndim == 1:
        t = int(target)
        if not 0 <= t < p.shape[0]:
            raise ValueError(f"nll_loss: target {t} out of range [0, {p.shape[0]})")
        pt = p.data[t]
        out = Tensor(np.asarray(-np.log(max(float(pt), LOG_FLOOR)), dtype=p.dtype))

        def backward(g):
            if needs_grad(p):
                dp = np.zeros_like(p.data)
                if pt > LOG_FLOOR:
                    dp[t] = -g / pt
                accum(p, dp)

        return record(out, (p,), backward)

    if p.ndim != 2:
        raise ValueError(f"nll_loss: probabilities must be 1-d or 2-d, got {p.ndim}-d")
    t = np.asarray(target, dtype=np.int64)
    if t.shape != (p.shape[0],):
        raise ValueError(f"nll_loss: expected {p.shape[0]} targets, got {t.shape}")
    if t.size and (t.min() < 0 or t.max() >= p.shape[1]):
        raise ValueError(f"nll_loss: target out of range [0, {p.shape[1]})")
    rows = np.arange(p.shape[0])
    pt = p.data[rows, t]
    out = Tensor(-np.log(np.maximum(pt, LOG_FLOOR)))

    def backward(g):
        if needs_grad(p):
            dp = np.zeros_like(p.data)
            live = pt > LOG_FLOOR
            dp[rows[live], t[live]] = -g[live] / pt[live]
            accum(p, dp)

    return record(out, (p,), backward)


# ---------------------------------------------------------------------------
# operator sugar on Tensor


def _coerce(other, like):
    if isinstance(other, Tensor):
        return other
    return Tensor(np.asarray(other, dtype=like.dtype))


Tensor.__add__ = lambda self, o: add(self, _coerce(o, self))
Tensor.__radd__ = lambda self, o: add(_coerce(o, self), self)
Tensor.__sub__ = lambda self, o: sub(self, _coerce(o, self))
Tensor.__rsub__ = lambda self, o: sub(_coerce(o, self), self)
Tensor.__mul__ = lambda self, o: mul(self, _coerce(o, self))
Tensor.__rmul__ = lambda self, o: mul(_coerce(o, self), self)
Tensor.__neg__ = lambda self: neg(self)
Tensor.__truediv__ = lambda self, o: mul(self, _coerce(1.0 / o, self))
