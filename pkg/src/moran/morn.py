"""Rectification sub-network.

A pooled conv stack predicts a coarse 2-channel offset field over the
image, tanh keeps entries inside (-1, 1), and bilinear resize spreads the
field to full resolution. Adding it to the identity coordinate grid
(normalized to [-1, 1]) and mapping back to pixel units gives the sampling
locations for the bilinear warp. A zero offset field reproduces the input
exactly, which is what makes weakly-supervised training of the offsets
workable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ops
from .autodiff.engine import Tensor
from .imageio import write_ppm
from .layers import Net


@dataclass(frozen=True)
class MornConfig:
    input_hw: tuple = (32, 100)
    first_pool: str = "max"  # max | avg | none (top-pooling ablation knob)
    first_pool_stride: int = 2
    channels: tuple = (64, 128, 64, 16)
    pool_after: tuple = (True, True, False, False)  # k2 s2 maxpool after block i

    @classmethod
    def full(cls):
        return cls()

    @classmethod
    def toy(cls):
        return cls(channels=(12, 24, 12, 8), pool_after=(True, True, False, False))

    def offset_grid_hw(self):
        """Spatial size of the raw offset field for this configuration."""
        h, w = self.input_hw
        if self.first_pool != "none":
            s = self.first_pool_stride
            h, w = (h - 2) // s + 1, (w - 2) // s + 1
        for pool in self.pool_after:
            if pool:
                h, w = (h - 2) // 2 + 1, (w - 2) // 2 + 1
        return h - 1, w - 1  # final k2 s1 maxpool


@dataclass
class OffsetField:
    raw: Tensor      # (.., 2, h, w) in (-1, 1)
    resized: Tensor  # (.., 2, H, W)


def build_basic_grid(h: int, w: int, dtype=np.float64) -> np.ndarray:
    """Identity coordinate grid: channel 0 rows, channel 1 columns, in [-1, 1]."""
    if h < 2 or w < 2:
        raise ValueError(f"basic grid needs H, W >= 2, got {h}x{w}")
    rows = 2.0 * np.arange(h) / (h - 1) - 1.0
    cols = 2.0 * np.arange(w) / (w - 1) - 1.0
    grid = np.empty((2, h, w), dtype=dtype)
    grid[0] = rows[:, None]
    grid[1] = cols[None, :]
    return grid


def compose_sampling_grid(resized, basic: np.ndarray):
    """Offsets + identity grid, clamped to [-1, 1], mapped to pixel units.

    Runs in pixel space against an exact integer base grid (the linear map
    commutes with the clamp), so zero offsets yield the integer lattice
    bit-exactly instead of accumulating rounding from the normalized form.
    """
    if resized.shape[-3:] != basic.shape:
        raise ValueError(f"offset field {resized.shape[-3:]} != basic grid {basic.shape}")
    h, w = basic.shape[-2:]
    if not np.array_equal(basic, build_basic_grid(h, w, basic.dtype)):
        raise ValueError("compose_sampling_grid expects the canonical basic grid")
    dt = resized.dtype
    base = np.empty((2, h, w), dtype=dt)
    base[0] = np.arange(h, dtype=dt)[:, None]
    base[1] = np.arange(w, dtype=dt)[None, :]
    scale = np.array([(h - 1) / 2.0, (w - 1) / 2.0], dtype=dt).reshape(2, 1, 1)
    hi = np.array([h - 1.0, w - 1.0], dtype=dt).reshape(2, 1, 1)
    return ops.clamp(resized * Tensor(scale) + Tensor(base), 0.0, hi)


class MornNet(Net):
    def __init__(self, config: MornConfig, rng, dtype=np.float32):
        super().__init__(dtype)
        self.config = config
        if config.first_pool not in ("max", "avg", "none"):
            raise ValueError(f"unknown first_pool {config.first_pool!r}")
        cin = 1
        for i, cout in enumerate(config.channels):
            self.add_conv(f"conv{i}", cin, cout, 3, rng, bn=True)
            cin = cout
        # offset head: conv without bn/relu, then k2 s1 pool and tanh
        self.add_conv("offset", cin, 2, 3, rng, bn=False)
        self._basic = None

    def forward(self, image, trace=None) -> OffsetField:
        cfg = self.config
        h, w = cfg.input_hw
        if image.shape[-3:] != (1, h, w):
            raise ValueError(f"rectifier expects 1x{h}x{w} input, got {image.shape[-3:]}")
        x = image if image.ndim == 4 else ops.reshape(image, (1,) + tuple(image.shape))
        if cfg.first_pool == "max":
            x = ops.maxpool2d(x, 2, cfg.first_pool_stride)
        elif cfg.first_pool == "avg":
            x = ops.avgpool2d(x, 2, cfg.first_pool_stride)
        if trace is not None:
            trace.append(x.shape[1:])
        for i in range(len(cfg.channels)):
            x = self.conv_bn_relu(f"conv{i}", x)
            if trace is not None:
                trace.append(x.shape[1:])
            if cfg.pool_after[i]:
                x = ops.maxpool2d(x, 2, 2)
                if trace is not None:
                    trace.append(x.shape[1:])
        x = ops.conv2d(x, self.params["offset.w"], self.params["offset.b"], 1, 1)
        if trace is not None:
            trace.append(x.shape[1:])
        x = ops.maxpool2d(x, 2, 1)
        if trace is not None:
            trace.append(x.shape[1:])
        raw = ops.tanh(x)
        resized = ops.bilinear_resize(raw, cfg.input_hw)
        if trace is not None:
            trace.append(raw.shape[1:])
            trace.append(resized.shape[1:])
        if image.ndim == 3:
            raw = ops.reshape(raw, raw.shape[1:])
            resized = ops.reshape(resized, resized.shape[1:])
        return OffsetField(raw, resized)

    def basic_grid(self):
        if self._basic is None or self._basic.dtype != self.dtype:
            self._basic = build_basic_grid(*self.config.input_hw, dtype=self.dtype)
        return self._basic

    def rectify(self, image):
        """Full warp: offsets -> sampling grid -> bilinear resample."""
        fld = self.forward(image)
        grid = compose_sampling_grid(fld.resized, self.basic_grid())
        return ops.grid_sample(image, grid), fld

    def zero_offset_head(self):
        """Zeroing the head makes the warp the identity (tanh(0) offsets)."""
        self.params["offset.w"].data[...] = 0
        self.params["offset.b"].data[...] = 0


def export_offset_heatmap(field, path_prefix) -> list:
    """One PPM per offset channel: gray at zero, red positive, blue negative,
    saturation tracking magnitude."""
    arr = field.resized.data if isinstance(field, OffsetField) else np.asarray(field)
    if arr.ndim != 3 or arr.shape[0] != 2:
        raise ValueError(f"expected a (2, H, W) offset field, got {arr.shape}")
    paths = []
    for c in range(2):
        v = np.clip(arr[c], -1.0, 1.0)
        pos = np.clip(v, 0, 1)
        neg = np.clip(-v, 0, 1)
        rgb = np.stack([
            128 + 127 * pos - 128 * neg,
            128 - 128 * pos - 128 * neg,
            128 - 128 * pos + 127 * neg,
        ], axis=-1)
        out = f"{path_prefix}_ch{c + 1}.ppm"
        write_ppm(out, np.clip(np.rint(rgb), 0, 255).astype(np.uint8))
        paths.append(out)
    return paths
