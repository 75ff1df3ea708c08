"""Central finite-difference oracle and the per-primitive gradient checks.

Each check_* function builds one seeded random instance, computes analytic
gradients through the tape, re-evaluates the same scalar loss with single
coordinates nudged by +/-eps, and returns the worst relative error. The
numeric side never touches the tape, so it is independent of the engine's
backward code.
"""

from __future__ import annotations

import numpy as np

from moran.autodiff import Tape, Tensor, ops


def analytic_grads(make_loss, params):
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = make_loss()
        tape.backward(loss)
    return loss.item(), [p.grad.copy() for p in params]


def fd_check(make_loss, params, eps=1e-5, max_coords=40, rng=None, exclude=None):
    """Worst relative error between tape gradients and central differences.

    `exclude(param, flat_index)` can veto coordinates that sit on a
    non-smooth point (pool ties, clamp boundaries).
    """
    _, grads = analytic_grads(make_loss, params)
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for p, ag in zip(params, grads):
        flat = p.data.reshape(-1)
        n = flat.size
        if max_coords is not None and n > max_coords:
            idx = rng.choice(n, size=max_coords, replace=False)
        else:
            idx = np.arange(n)
        if exclude is not None:
            idx = np.array([i for i in idx if not exclude(p, i)], dtype=np.int64)
        if idx.size == 0:
            continue
        num = np.zeros(idx.size)
        for j, i in enumerate(idx):
            v = flat[i]
            flat[i] = v + eps
            fp = make_loss().item()
            flat[i] = v - eps
            fm = make_loss().item()
            flat[i] = v
            num[j] = (fp - fm) / (2 * eps)
        ana = ag.reshape(-1)[idx]
        scale = max(np.abs(ana).max(), np.abs(num).max(), 1e-6)
        err = np.abs(ana - num).max() / scale
        worst = max(worst, err)
    return worst


def _proj_loss(out, proj):
    return ops.tsum(out * proj)


def _t(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


# --------------------------------------------------------------------------
# one check per primitive; each returns the worst relative error found


def check_conv2d(seed):
    rng = np.random.default_rng(seed)
    stride = int(rng.integers(1, 3))
    pad = int(rng.integers(0, 2))
    k = 2 * pad + int(rng.integers(1, 4))  # keeps H >= 1 below
    # pick output sizes first so the window tiles the input exactly
    ho = int(rng.integers(1, 4))
    wo = int(rng.integers(1, 4))
    h = (ho - 1) * stride + k - 2 * pad
    w = (wo - 1) * stride + k - 2 * pad
    x = _t(rng, 2, 2, h, w)
    wt = _t(rng, 3, 2, k, k)
    b = _t(rng, 3)
    proj = rng.standard_normal((2, 3, ho, wo))
    return fd_check(lambda: _proj_loss(ops.conv2d(x, wt, b, stride, pad), proj), [x, wt, b])


def check_maxpool2d(seed):
    rng = np.random.default_rng(seed)
    # well-separated values keep every window away from argmax ties
    vals = rng.permutation(2 * 2 * 5 * 6) * 0.01 + rng.standard_normal() * 0.1
    x = Tensor(vals.reshape(2, 2, 5, 6).astype(np.float64), requires_grad=True)
    stride = (int(rng.integers(1, 3)), int(rng.integers(1, 3)))
    pad = (int(rng.integers(0, 2)), int(rng.integers(0, 2)))
    out = ops.maxpool2d(Tensor(x.data), 2, stride, pad)
    proj = rng.standard_normal(out.shape)
    return fd_check(lambda: _proj_loss(ops.maxpool2d(x, 2, stride, pad), proj), [x])


def check_avgpool2d(seed):
    rng = np.random.default_rng(seed)
    x = _t(rng, 2, 3, 4, 6)
    stride = (int(rng.integers(1, 3)), int(rng.integers(1, 3)))
    out = ops.avgpool2d(Tensor(x.data), 2, stride)
    proj = rng.standard_normal(out.shape)
    return fd_check(lambda: _proj_loss(ops.avgpool2d(x, 2, stride), proj), [x])


def check_batchnorm2d(seed):
    rng = np.random.default_rng(seed)
    x = _t(rng, 4, 3, 2, 3)
    gamma = Tensor(rng.standard_normal(3) + 1.0, requires_grad=True)
    beta = _t(rng, 3)
    proj = rng.standard_normal((4, 3, 2, 3))

    def loss():
        state = ops.BnState.create(3)
        return _proj_loss(ops.batchnorm2d(x, gamma, beta, state, "train"), proj)

    return fd_check(loss, [x, gamma, beta])


def check_softmax_nll(seed):
    rng = np.random.default_rng(seed)
    logits = _t(rng, 9)
    target = int(rng.integers(0, 9))
    return fd_check(lambda: ops.nll_loss(ops.softmax(logits), target), [logits])


def check_linear(seed):
    rng = np.random.default_rng(seed)
    din, dout = int(rng.integers(1, 6)), int(rng.integers(1, 6))
    x = _t(rng, 3, 2, din)
    w = _t(rng, dout, din)
    b = _t(rng, dout)
    proj = rng.standard_normal((3, 2, dout))
    return fd_check(lambda: _proj_loss(ops.linear(x, w, b), proj), [x, w, b])


def check_bilinear_resize(seed):
    rng = np.random.default_rng(seed)
    x = _t(rng, 2, 3, 4)
    target = (int(rng.integers(1, 8)), int(rng.integers(1, 12)))
    proj = rng.standard_normal((2,) + target)
    return fd_check(lambda: _proj_loss(ops.bilinear_resize(x, target), proj), [x])


def check_grid_sample(seed):
    rng = np.random.default_rng(seed)
    img = _t(rng, 2, 4, 5)
    # interior coordinates kept clear of the integer-lattice kinks
    coords = Tensor(np.stack([
        rng.integers(0, 3, (3, 4)) + rng.uniform(0.2, 0.8, (3, 4)),
        rng.integers(0, 4, (3, 4)) + rng.uniform(0.2, 0.8, (3, 4)),
    ]), requires_grad=True)
    proj = rng.standard_normal((2, 3, 4))
    return fd_check(lambda: _proj_loss(ops.grid_sample(img, coords), proj), [img, coords])


def _bilstm_params(rng, din, h):
    def direction():
        return ops.LstmDirParams(_t(rng, 4 * h, din, scale=0.5),
                                 _t(rng, 4 * h, h, scale=0.5),
                                 _t(rng, 4 * h, scale=0.5))
    return ops.BilstmParams(direction(), direction())


def check_bilstm(seed):
    rng = np.random.default_rng(seed)
    p = _bilstm_params(rng, 2, 2)
    x = _t(rng, 3, 2)
    proj = rng.standard_normal((3, 4))
    params = [x, p.fwd.w, p.fwd.r, p.fwd.b, p.bwd.w, p.bwd.r, p.bwd.b]
    return fd_check(lambda: _proj_loss(ops.bilstm(x, p), proj), params)


def check_gru_cell(seed):
    rng = np.random.default_rng(seed)
    din, h = 3, 2
    p = ops.GruParams(_t(rng, 3 * h, din, scale=0.5),
                      _t(rng, 3 * h, h, scale=0.5),
                      _t(rng, 3 * h, scale=0.5))
    x = _t(rng, din)
    s = _t(rng, h)
    proj = rng.standard_normal(h)
    return fd_check(lambda: _proj_loss(ops.gru_cell(x, s, p), proj), [x, s, p.w, p.r, p.b])


def check_embedding(seed):
    rng = np.random.default_rng(seed)
    table = _t(rng, 5, 3)
    ids = rng.integers(0, 5, size=4)
    proj = rng.standard_normal((4, 3))
    return fd_check(lambda: _proj_loss(ops.embedding(ids, table), proj), [table])


def check_stacked_linear(seed):
    rng = np.random.default_rng(seed)
    x = _t(rng, 2, 4)
    w1, b1 = _t(rng, 3, 4), _t(rng, 3)
    w2, b2 = _t(rng, 2, 3), _t(rng, 2)
    proj = rng.standard_normal((2, 2))

    def loss():
        return _proj_loss(ops.linear(ops.tanh(ops.linear(x, w1, b1)), w2, b2), proj)

    return fd_check(loss, [x, w1, b1, w2, b2])


def check_clamp(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.uniform(-2, 2, (4, 5)), requires_grad=True)
    proj = rng.standard_normal((4, 5))

    def exclude(p, i):
        return abs(abs(p.data.reshape(-1)[i]) - 1.0) < 1e-3

    return fd_check(lambda: _proj_loss(ops.clamp(x, -1.0, 1.0), proj), [x], exclude=exclude)


PRIMITIVE_CHECKS = {
    "conv2d": check_conv2d,
    "maxpool2d": check_maxpool2d,
    "avgpool2d": check_avgpool2d,
    "batchnorm2d": check_batchnorm2d,
    "softmax_nll": check_softmax_nll,
    "linear": check_linear,
    "bilinear_resize": check_bilinear_resize,
    "grid_sample": check_grid_sample,
    "bilstm": check_bilstm,
    "gru_cell": check_gru_cell,
    "embedding": check_embedding,
    "stacked_linear": check_stacked_linear,
    "clamp": check_clamp,
}
