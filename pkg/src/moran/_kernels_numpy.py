"""Pure-numpy reference kernels.

Same signatures as the numba module; selected via MORAN_BACKEND=numpy or
used automatically when numba is unavailable. Correctness-first: these
are the ground truth the accelerated kernels are benchmarked against.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

NAME = "numpy"


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -60.0, 60.0)))


def im2col(xp, kh, kw, sh, sw, ho, wo):
    """Window-unfold a padded NCHW array into (N*ho*wo, C*kh*kw)."""
    n, c, _, _ = xp.shape
    s0, s1, s2, s3 = xp.strides
    view = as_strided(xp, (n, c, ho, wo, kh, kw), (s0, s1, s2 * sh, s3 * sw, s2, s3))
    return np.ascontiguousarray(view.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * kh * kw)


def col2im(cols, n, c, hp, wp, kh, kw, sh, sw, ho, wo):
    """Scatter-add the unfolded layout back onto the padded input shape."""
    xp = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    cols6 = cols.reshape(n, ho, wo, c, kh, kw)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + sh * ho : sh, j : j + sw * wo : sw] += (
                cols6[:, :, :, :, i, j].transpose(0, 3, 1, 2))
    return xp


def maxpool_fwd(x, kh, kw, sh, sw, ph, pw):
    n, c, h, w = x.shape
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    neg = np.finfo(x.dtype).min
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)), constant_values=neg)
    s0, s1, s2, s3 = xp.strides
    win = as_strided(xp, (n, c, ho, wo, kh, kw), (s0, s1, s2 * sh, s3 * sw, s2, s3))
    flat = win.reshape(n, c, ho, wo, kh * kw)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    ki = arg // kw
    kj = arg % kw
    r = np.arange(ho)[:, None] * sh - ph + ki
    col = np.arange(wo)[None, :] * sw - pw + kj
    idx = (r * w + col).astype(np.int32)
    return out, idx


def maxpool_bwd(gout, idx, h, w):
    n, c, ho, wo = gout.shape
    gx = np.zeros((n, c, h * w), dtype=gout.dtype)
    nn = np.arange(n)[:, None, None, None]
    cc = np.arange(c)[None, :, None, None]
    np.add.at(gx, (nn, cc, idx), gout)
    return gx.reshape(n, c, h, w)


def _corners(rows, cols, h, w):
    yc = np.clip(rows, 0.0, h - 1.0)
    xc = np.clip(cols, 0.0, w - 1.0)
    y0 = np.clip(np.floor(yc), 0, max(h - 2, 0)).astype(np.int64)
    x0 = np.clip(np.floor(xc), 0, max(w - 2, 0)).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (yc - y0).astype(rows.dtype)
    wx = (xc - x0).astype(cols.dtype)
    return y0, y1, x0, x1, wy, wx


def grid_sample_fwd(img, rows, cols):
    n, c, h, w = img.shape
    y0, y1, x0, x1, wy, wx = _corners(rows, cols, h, w)
    nn = np.arange(n)[:, None, None]
    v00 = img[nn, :, y0, x0]  # (N, Hg, Wg, C)
    v01 = img[nn, :, y0, x1]
    v10 = img[nn, :, y1, x0]
    v11 = img[nn, :, y1, x1]
    wy = wy[..., None]
    wx = wx[..., None]
    out = (v00 * (1 - wy) * (1 - wx) + v01 * (1 - wy) * wx
           + v10 * wy * (1 - wx) + v11 * wy * wx)
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def grid_sample_bwd(img, rows, cols, gout):
    n, c, h, w = img.shape
    y0, y1, x0, x1, wy, wx = _corners(rows, cols, h, w)
    nn = np.arange(n)[:, None, None]
    v00 = img[nn, :, y0, x0]
    v01 = img[nn, :, y0, x1]
    v10 = img[nn, :, y1, x0]
    v11 = img[nn, :, y1, x1]

    g = gout.transpose(0, 2, 3, 1)  # (N, Hg, Wg, C)
    wy4 = wy[..., None]
    wx4 = wx[..., None]
    gimg = np.zeros((n, c, h * w), dtype=img.dtype)
    cc = np.arange(c)[None, None, None, :]
    n4 = np.arange(n)[:, None, None, None]
    for val, yy, xx in (
        (g * (1 - wy4) * (1 - wx4), y0, x0),
        (g * (1 - wy4) * wx4, y0, x1),
        (g * wy4 * (1 - wx4), y1, x0),
        (g * wy4 * wx4, y1, x1),
    ):
        np.add.at(gimg, (n4, cc, (yy * w + xx)[..., None]), val)
    gimg = gimg.reshape(n, c, h, w)

    dvy = (v10 - v00) * (1 - wx4) + (v11 - v01) * wx4
    dvx = (v01 - v00) * (1 - wy4) + (v11 - v10) * wy4
    grows = (g * dvy).sum(axis=-1)
    gcols = (g * dvx).sum(axis=-1)
    # clamped-saturated coordinates contribute no coordinate gradient
    grows[(rows < 0) | (rows > h - 1)] = 0
    gcols[(cols < 0) | (cols > w - 1)] = 0
    return gimg, grows.astype(rows.dtype), gcols.astype(cols.dtype)


# -- recurrent sequence kernels ------------------------------------------------


def lstm_seq_fwd(pre, rt, reverse):
    """Run one LSTM direction over (N, L, 4h) pre-activations.

    rt is R transposed, (h, 4h); gate row order is i, f, o, g so the three
    sigmoids run as one contiguous block. Returns per-step hidden states
    plus the saved activations the backward sweep needs."""
    n, l, h4 = pre.shape
    h = h4 // 4
    hs = np.zeros((n, l, h), dtype=pre.dtype)
    acts = np.empty((l, n, h4), dtype=pre.dtype)
    tcs = np.empty((l, n, h), dtype=pre.dtype)
    cs = np.empty((l, n, h), dtype=pre.dtype)
    hv = np.zeros((n, h), dtype=pre.dtype)
    cv = np.zeros((n, h), dtype=pre.dtype)
    order = range(l - 1, -1, -1) if reverse else range(l)
    with np.errstate(over="ignore"):  # saturated sigmoids round to 0 exactly
        for t in order:
            g = pre[:, t] + hv @ rt
            sig = 1.0 / (1.0 + np.exp(-g[:, : 3 * h]))
            gg = np.tanh(g[:, 3 * h :])
            i = sig[:, :h]
            f = sig[:, h : 2 * h]
            o = sig[:, 2 * h :]
            cv = f * cv + i * gg
            tc = np.tanh(cv)
            hv = o * tc
            acts[t, :, : 3 * h] = sig
            acts[t, :, 3 * h :] = gg
            cs[t] = cv
            tcs[t] = tc
            hs[:, t] = hv
    return hs, acts, tcs, cs


def lstm_seq_bwd(ghs, acts, tcs, cs, r, reverse):
    """Reverse sweep of one direction; returns d(pre-activations) (N, L, 4h)."""
    n, l, h = ghs.shape
    dpre = np.empty((n, l, 4 * h), dtype=ghs.dtype)
    dh = np.zeros((n, h), dtype=ghs.dtype)
    dc = np.zeros((n, h), dtype=ghs.dtype)
    order = range(l) if reverse else range(l - 1, -1, -1)
    first = l - 1 if reverse else 0
    for t in order:
        dh = dh + ghs[:, t]
        i = acts[t, :, :h]
        f = acts[t, :, h : 2 * h]
        o = acts[t, :, 2 * h : 3 * h]
        gg = acts[t, :, 3 * h :]
        tc = tcs[t]
        if t == first:
            c_prev = np.zeros((n, h), dtype=ghs.dtype)
        else:
            c_prev = cs[t + 1] if reverse else cs[t - 1]
        do = dh * tc
        dcv = dc + dh * o * (1 - tc * tc)
        dg = dpre[:, t]
        dg[:, :h] = dcv * gg * i * (1 - i)
        dg[:, h : 2 * h] = dcv * c_prev * f * (1 - f)
        dg[:, 2 * h : 3 * h] = do * o * (1 - o)
        dg[:, 3 * h :] = dcv * i * (1 - gg * gg)
        dc = dcv * f
        dh = dg @ r
    return dpre


def gru_gates_fwd(gx, gs, s_prev):
    h = s_prev.shape[1]
    z = _sigmoid(gx[:, :h] + gs[:, :h])
    r = _sigmoid(gx[:, h : 2 * h] + gs[:, h : 2 * h])
    gsn = gs[:, 2 * h :]
    n = np.tanh(gx[:, 2 * h :] + r * gsn)
    s_new = (1 - z) * s_prev + z * n
    return s_new, z, r, n, np.ascontiguousarray(gsn)


def gru_gates_bwd(ds, z, r, n, gsn, s_prev):
    dn = ds * z
    dz = ds * (n - s_prev)
    dn_pre = dn * (1 - n * n)
    dr = dn_pre * gsn
    dz_pre = dz * z * (1 - z)
    dr_pre = dr * r * (1 - r)
    dgx = np.concatenate([dz_pre, dr_pre, dn_pre], axis=1)
    dgs = np.concatenate([dz_pre, dr_pre, dn_pre * r], axis=1)
    ds_prev = ds * (1 - z)
    return dgx, dgs, ds_prev


# -- fused batchnorm + relu ------------------------------------------------------


def channel_stats(x):
    """Per-channel sum and sum of squares, accumulated in float64."""
    s = x.sum(axis=(0, 2, 3), dtype=np.float64)
    ss = np.einsum("nchw,nchw->c", x, x, dtype=np.float64)
    return s, ss


def bn_relu_fwd(x, gamma, beta, mu, invstd):
    xhat = (x - mu[:, None, None]) * invstd[:, None, None]
    y = gamma[:, None, None] * xhat + beta[:, None, None]
    return np.maximum(y, 0)


def bn_relu_bwd_stats(x, g, y, gamma, mu, invstd):
    """First backward pass: per-channel sums of the relu-masked gradient."""
    dpre = g * (y > 0)
    xhat = (x - mu[:, None, None]) * invstd[:, None, None]
    dbeta = dpre.sum(axis=(0, 2, 3), dtype=np.float64)
    dgamma = (dpre * xhat).sum(axis=(0, 2, 3), dtype=np.float64)
    t1 = dbeta * gamma
    t2 = dgamma * gamma
    return dgamma, dbeta, t1, t2


def bn_relu_bwd_dx(x, g, y, gamma, mu, invstd, t1, t2, m, train):
    dpre = g * (y > 0)
    dxhat = dpre * gamma[:, None, None]
    if not train:
        return dxhat * invstd[:, None, None]
    xhat = (x - mu[:, None, None]) * invstd[:, None, None]
    return (dxhat - t1[:, None, None] / m - xhat * t2[:, None, None] / m) * invstd[:, None, None]


def adadelta_update(p, g, eg2, ed2, lr, rho, eps):
    eg2 *= rho
    eg2 += (1.0 - rho) * g * g
    upd = -np.sqrt((ed2 + eps) / (eg2 + eps)) * g
    ed2 *= rho
    ed2 += (1.0 - rho) * upd * upd
    p += lr * upd
