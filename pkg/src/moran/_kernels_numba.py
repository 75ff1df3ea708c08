"""numba-accelerated kernels (hot inner loops).

Mirrors _kernels_numpy signature for signature; the active module is
chosen in moran.backend. Loops are tiled so that each (batch, output-row)
block stays cache-resident; recurrent sweeps run whole sequences per call
with the small matmuls dispatched to BLAS from inside the jit region.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

NAME = "numba"


@njit(cache=True, fastmath=True)
def im2col(xp, kh, kw, sh, sw, ho, wo):
    n, c, hp, wp = xp.shape
    ckk = c * kh * kw
    cols = np.empty((n * ho * wo, ckk), dtype=xp.dtype)
    for b in range(n):
        for oh in range(ho):
            base = (b * ho + oh) * wo
            r0 = oh * sh
            for ch in range(c):
                for i in range(kh):
                    row = xp[b, ch, r0 + i]
                    cbase = (ch * kh + i) * kw
                    for j in range(kw):
                        col = cbase + j
                        for ow in range(wo):
                            cols[base + ow, col] = row[ow * sw + j]
    return cols


@njit(cache=True, fastmath=True)
def col2im(cols, n, c, hp, wp, kh, kw, sh, sw, ho, wo):
    xp = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for b in range(n):
        for oh in range(ho):
            base = (b * ho + oh) * wo
            r0 = oh * sh
            for ch in range(c):
                for i in range(kh):
                    row = xp[b, ch, r0 + i]
                    cbase = (ch * kh + i) * kw
                    for j in range(kw):
                        col = cbase + j
                        for ow in range(wo):
                            row[ow * sw + j] += cols[base + ow, col]
    return xp


@njit(cache=True)
def maxpool_fwd(x, kh, kw, sh, sw, ph, pw):
    n, c, h, w = x.shape
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    out = np.empty((n, c, ho, wo), dtype=x.dtype)
    idx = np.empty((n, c, ho, wo), dtype=np.int32)
    if ph == 0 and pw == 0:
        # every window lies inside the image: branch-free inner loops
        for b in range(n):
            for ch in range(c):
                for oh in range(ho):
                    r0 = oh * sh
                    for ow in range(wo):
                        c0 = ow * sw
                        best = x[b, ch, r0, c0]
                        bi = r0 * w + c0
                        for i in range(kh):
                            rr = r0 + i
                            for j in range(kw):
                                v = x[b, ch, rr, c0 + j]
                                if v > best:
                                    best = v
                                    bi = rr * w + c0 + j
                        out[b, ch, oh, ow] = best
                        idx[b, ch, oh, ow] = bi
        return out, idx
    for b in range(n):
        for ch in range(c):
            for oh in range(ho):
                for ow in range(wo):
                    best = -1.0e300
                    bi = -1
                    r0 = oh * sh - ph
                    c0 = ow * sw - pw
                    for i in range(kh):
                        rr = r0 + i
                        if rr < 0 or rr >= h:
                            continue
                        for j in range(kw):
                            cc = c0 + j
                            if cc < 0 or cc >= w:
                                continue
                            v = x[b, ch, rr, cc]
                            if v > best:
                                best = v
                                bi = rr * w + cc
                    out[b, ch, oh, ow] = best
                    idx[b, ch, oh, ow] = bi
    return out, idx


@njit(cache=True)
def maxpool_bwd(gout, idx, h, w):
    n, c, ho, wo = gout.shape
    gx = np.zeros((n, c, h * w), dtype=gout.dtype)
    for b in range(n):
        for ch in range(c):
            for oh in range(ho):
                for ow in range(wo):
                    gx[b, ch, idx[b, ch, oh, ow]] += gout[b, ch, oh, ow]
    return gx.reshape(n, c, h, w)


@njit(cache=True)
def grid_sample_fwd(img, rows, cols):
    n, c, h, w = img.shape
    hg, wg = rows.shape[1], rows.shape[2]
    out = np.empty((n, c, hg, wg), dtype=img.dtype)
    for b in range(n):
        for i in range(hg):
            for j in range(wg):
                yc = min(max(rows[b, i, j], 0.0), h - 1.0)
                xc = min(max(cols[b, i, j], 0.0), w - 1.0)
                y0 = min(int(math.floor(yc)), max(h - 2, 0))
                x0 = min(int(math.floor(xc)), max(w - 2, 0))
                y1 = min(y0 + 1, h - 1)
                x1 = min(x0 + 1, w - 1)
                wy = yc - y0
                wx = xc - x0
                for ch in range(c):
                    v00 = img[b, ch, y0, x0]
                    v01 = img[b, ch, y0, x1]
                    v10 = img[b, ch, y1, x0]
                    v11 = img[b, ch, y1, x1]
                    out[b, ch, i, j] = ((v00 * (1 - wy) + v10 * wy) * (1 - wx)
                                        + (v01 * (1 - wy) + v11 * wy) * wx)
    return out


@njit(cache=True)
def grid_sample_bwd(img, rows, cols, gout):
    n, c, h, w = img.shape
    hg, wg = rows.shape[1], rows.shape[2]
    gimg = np.zeros(img.shape, dtype=img.dtype)
    grows = np.zeros(rows.shape, dtype=rows.dtype)
    gcols = np.zeros(cols.shape, dtype=cols.dtype)
    for b in range(n):
        for i in range(hg):
            for j in range(wg):
                ry = rows[b, i, j]
                rx = cols[b, i, j]
                yc = min(max(ry, 0.0), h - 1.0)
                xc = min(max(rx, 0.0), w - 1.0)
                y0 = min(int(math.floor(yc)), max(h - 2, 0))
                x0 = min(int(math.floor(xc)), max(w - 2, 0))
                y1 = min(y0 + 1, h - 1)
                x1 = min(x0 + 1, w - 1)
                wy = yc - y0
                wx = xc - x0
                gy = 0.0
                gx = 0.0
                for ch in range(c):
                    g = gout[b, ch, i, j]
                    gimg[b, ch, y0, x0] += g * (1 - wy) * (1 - wx)
                    gimg[b, ch, y0, x1] += g * (1 - wy) * wx
                    gimg[b, ch, y1, x0] += g * wy * (1 - wx)
                    gimg[b, ch, y1, x1] += g * wy * wx
                    v00 = img[b, ch, y0, x0]
                    v01 = img[b, ch, y0, x1]
                    v10 = img[b, ch, y1, x0]
                    v11 = img[b, ch, y1, x1]
                    gy += g * ((v10 - v00) * (1 - wx) + (v11 - v01) * wx)
                    gx += g * ((v01 - v00) * (1 - wy) + (v11 - v10) * wy)
                if 0.0 <= ry <= h - 1.0:
                    grows[b, i, j] = gy
                if 0.0 <= rx <= w - 1.0:
                    gcols[b, i, j] = gx
    return gimg, grows, gcols


@njit(cache=True)
def _sig(x):
    if x > 60.0:
        return 1.0
    if x < -60.0:
        return 0.0
    return 1.0 / (1.0 + math.exp(-x))


# the forward gate math is transcendental-bound and numpy's SIMD exp beats a
# scalar jit loop on it; the reverse sweep below is polynomial and jit wins
from ._kernels_numpy import lstm_seq_fwd  # noqa: E402


@njit(cache=True, fastmath=True)
def lstm_seq_bwd(ghs, acts, tcs, cs, r, reverse):
    # gate row order matches lstm_seq_fwd: i, f, o, g
    n, l, h = ghs.shape
    dpre = np.empty((n, l, 4 * h), dtype=ghs.dtype)
    dh = np.zeros((n, h), dtype=ghs.dtype)
    dc = np.zeros((n, h), dtype=ghs.dtype)
    first = l - 1 if reverse else 0
    for step in range(l):
        t = step if reverse else l - 1 - step
        dg = np.empty((n, 4 * h), dtype=ghs.dtype)
        for b in range(n):
            for k in range(h):
                dhv = dh[b, k] + ghs[b, t, k]
                i = acts[t, b, k]
                f = acts[t, b, h + k]
                o = acts[t, b, 2 * h + k]
                gg = acts[t, b, 3 * h + k]
                tc = tcs[t, b, k]
                if t == first:
                    c_prev = 0.0
                elif reverse:
                    c_prev = cs[t + 1, b, k]
                else:
                    c_prev = cs[t - 1, b, k]
                do = dhv * tc
                dcv = dc[b, k] + dhv * o * (1 - tc * tc)
                dg[b, k] = dcv * gg * i * (1 - i)
                dg[b, h + k] = dcv * c_prev * f * (1 - f)
                dg[b, 2 * h + k] = do * o * (1 - o)
                dg[b, 3 * h + k] = dcv * i * (1 - gg * gg)
                dc[b, k] = dcv * f
        dpre[:, t] = dg
        dh = np.dot(dg, r)
    return dpre


@njit(cache=True)
def gru_gates_fwd(gx, gs, s_prev):
    n, h = s_prev.shape
    s_new = np.empty((n, h), dtype=gx.dtype)
    z = np.empty((n, h), dtype=gx.dtype)
    r = np.empty((n, h), dtype=gx.dtype)
    nn = np.empty((n, h), dtype=gx.dtype)
    gsn = np.empty((n, h), dtype=gx.dtype)
    for b in range(n):
        for k in range(h):
            zv = _sig(gx[b, k] + gs[b, k])
            rv = _sig(gx[b, h + k] + gs[b, h + k])
            gn = gs[b, 2 * h + k]
            nv = math.tanh(gx[b, 2 * h + k] + rv * gn)
            z[b, k] = zv
            r[b, k] = rv
            nn[b, k] = nv
            gsn[b, k] = gn
            s_new[b, k] = (1 - zv) * s_prev[b, k] + zv * nv
    return s_new, z, r, nn, gsn


@njit(cache=True)
def gru_gates_bwd(ds, z, r, n, gsn, s_prev):
    b_n, h = ds.shape
    dgx = np.empty((b_n, 3 * h), dtype=ds.dtype)
    dgs = np.empty((b_n, 3 * h), dtype=ds.dtype)
    ds_prev = np.empty((b_n, h), dtype=ds.dtype)
    for b in range(b_n):
        for k in range(h):
            d = ds[b, k]
            zv = z[b, k]
            rv = r[b, k]
            nv = n[b, k]
            dn = d * zv
            dz = d * (nv - s_prev[b, k])
            dn_pre = dn * (1 - nv * nv)
            dr = dn_pre * gsn[b, k]
            dz_pre = dz * zv * (1 - zv)
            dr_pre = dr * rv * (1 - rv)
            dgx[b, k] = dz_pre
            dgx[b, h + k] = dr_pre
            dgx[b, 2 * h + k] = dn_pre
            dgs[b, k] = dz_pre
            dgs[b, h + k] = dr_pre
            dgs[b, 2 * h + k] = dn_pre * rv
            ds_prev[b, k] = d * (1 - zv)
    return dgx, dgs, ds_prev


# -- fused batchnorm + relu ------------------------------------------------------


@njit(cache=True, fastmath=True)
def channel_stats(x):
    n, c, h, w = x.shape
    s = np.zeros(c, dtype=np.float64)
    ss = np.zeros(c, dtype=np.float64)
    for b in range(n):
        for ch in range(c):
            a1 = 0.0
            a2 = 0.0
            for i in range(h):
                for j in range(w):
                    v = x[b, ch, i, j]
                    a1 += v
                    a2 += v * v
            s[ch] += a1
            ss[ch] += a2
    return s, ss


@njit(cache=True, fastmath=True)
def bn_relu_fwd(x, gamma, beta, mu, invstd):
    n, c, h, w = x.shape
    y = np.empty_like(x)
    for b in range(n):
        for ch in range(c):
            ga = gamma[ch] * invstd[ch]
            be = beta[ch] - gamma[ch] * invstd[ch] * mu[ch]
            for i in range(h):
                for j in range(w):
                    v = ga * x[b, ch, i, j] + be
                    y[b, ch, i, j] = v if v > 0 else 0.0
    return y


@njit(cache=True, fastmath=True)
def bn_relu_bwd_stats(x, g, y, gamma, mu, invstd):
    n, c, h, w = x.shape
    dgamma = np.zeros(c, dtype=np.float64)
    dbeta = np.zeros(c, dtype=np.float64)
    t1 = np.zeros(c, dtype=np.float64)
    t2 = np.zeros(c, dtype=np.float64)
    for b in range(n):
        for ch in range(c):
            s_db = 0.0
            s_dg = 0.0
            for i in range(h):
                for j in range(w):
                    if y[b, ch, i, j] > 0:
                        gv = g[b, ch, i, j]
                        s_db += gv
                        s_dg += gv * (x[b, ch, i, j] - mu[ch]) * invstd[ch]
            dbeta[ch] += s_db
            dgamma[ch] += s_dg
    for ch in range(c):
        t1[ch] = dbeta[ch] * gamma[ch]
        t2[ch] = dgamma[ch] * gamma[ch]
    return dgamma, dbeta, t1, t2


@njit(cache=True, fastmath=True)
def bn_relu_bwd_dx(x, g, y, gamma, mu, invstd, t1, t2, m, train):
    n, c, h, w = x.shape
    dx = np.empty_like(x)
    for b in range(n):
        for ch in range(c):
            ga = gamma[ch]
            inv = invstd[ch]
            a1 = t1[ch] / m
            a2 = t2[ch] / m
            for i in range(h):
                for j in range(w):
                    dpre = g[b, ch, i, j] if y[b, ch, i, j] > 0 else 0.0
                    dxhat = dpre * ga
                    if train:
                        xhat = (x[b, ch, i, j] - mu[ch]) * inv
                        dx[b, ch, i, j] = (dxhat - a1 - xhat * a2) * inv
                    else:
                        dx[b, ch, i, j] = dxhat * inv
    return dx


@njit(cache=True)
def adadelta_update(p, g, eg2, ed2, lr, rho, eps):
    pf = p.reshape(-1)
    gf = g.reshape(-1)
    e2 = eg2.reshape(-1)
    d2 = ed2.reshape(-1)
    for i in range(pf.size):
        gv = gf[i]
        e2[i] = rho * e2[i] + (1.0 - rho) * gv * gv
        upd = -math.sqrt((d2[i] + eps) / (e2[i] + eps)) * gv
        d2[i] = rho * d2[i] + (1.0 - rho) * upd * upd
        pf[i] += lr * upd
