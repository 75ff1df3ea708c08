"""Fractional pickup: training-time blending of one adjacent pair of
attention weights per decoder step.

The blend is applied after the softmax and before the glimpse, and it is
recorded on the tape, so the widened gradient flow to the neighboring
feature vector falls out of ordinary backpropagation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ops
from .autodiff.engine import Tensor, accum, needs_grad, record
from .autodiff.rng import Rng


@dataclass(frozen=True)
class FpDraw:
    beta: float  # blend weight in [0, 1)
    k: int       # 1-based index of the left element of the perturbed pair


def fp_sample(rng: Rng, length: int) -> FpDraw:
    """Fresh (beta, pair index) draw; one per decoder step."""
    if length < 2:
        raise ValueError(f"fractional pickup needs at least 2 weights, got {length}")
    beta = rng.uniform()
    k = rng.randint(1, length - 1)
    return FpDraw(beta, k)


def _conserving_blend(ak, ak1, beta):
    """Blend a pair so ak' + ak1' equals ak + ak1 bit-exactly.

    The left output is the rounded convex blend; the right is derived from
    the pair sum, then nudged by ulps until the float pair-sum matches.
    Rows where no ulp-neighbor satisfies the identity fall back to the
    unperturbed pair (an ulp-level event; beta is random anyway).
    """
    s = ak + ak1
    p = beta * ak + (1.0 - beta) * ak1
    for _ in range(4):
        q = s - p
        ok = (p + q == s) & (p >= 0) & (q >= 0)
        if ok.all():
            return p, q
        p = np.where(ok, p, np.nextafter(p, np.where(p + (s - p) < s, np.inf, -np.inf)))
    q = s - p
    ok = (p + q == s) & (p >= 0) & (q >= 0)
    return np.where(ok, p, ak), np.where(ok, q, ak1)


def fp_perturb(alpha, draw: FpDraw):
    """alpha: (L,) or (N, L) attention weights; returns the blended copy."""
    length = alpha.shape[-1]
    if not 1 <= draw.k <= length - 1:
        raise ValueError(f"pair index {draw.k} out of range [1, {length - 1}]")
    b = float(draw.beta)
    i = draw.k - 1
    data = alpha.data.copy()
    if b == 1.0:
        pass  # identity
    elif b == 0.0:
        data[..., i], data[..., i + 1] = alpha.data[..., i + 1], alpha.data[..., i].copy()
    else:
        p, q = _conserving_blend(alpha.data[..., i], alpha.data[..., i + 1], alpha.dtype.type(b))
        data[..., i] = p
        data[..., i + 1] = q
    out = Tensor(data)

    def backward(g):
        if needs_grad(alpha):
            ga = g.copy()
            gk = g[..., i].copy()
            gk1 = g[..., i + 1].copy()
            ga[..., i] = b * gk + (1.0 - b) * gk1
            ga[..., i + 1] = (1.0 - b) * gk + b * gk1
            accum(alpha, ga)

    return record(out, (alpha,), backward)
