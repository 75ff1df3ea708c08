"""Binary PGM (P5) and PPM (P6) reading/writing, 8-bit."""

from __future__ import annotations

import numpy as np


def _quantize(arr):
    if arr.dtype == np.uint8:
        return arr
    return np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)


def write_pgm(path, image):
    """image: (H, W) uint8, or floats in [0, 1]."""
    img = _quantize(np.asarray(image))
    if img.ndim != 2:
        raise ValueError(f"PGM image must be 2-d, got {img.ndim}-d")
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(img.tobytes())


def write_ppm(path, image):
    """image: (H, W, 3) uint8."""
    img = np.asarray(image, dtype=np.uint8)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"PPM image must be (H, W, 3), got {img.shape}")
    h, w, _ = img.shape
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(img.tobytes())


def _read_tokens(f, n):
    toks = []
    while len(toks) < n:
        line = f.readline()
        if not line:
            raise ValueError("truncated netpbm header")
        line = line.split(b"#", 1)[0]
        toks.extend(line.split())
    return toks


def read_pgm(path):
    """Returns (H, W) uint8."""
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P5":
            raise ValueError(f"{path}: not a binary PGM (magic {magic!r})")
        w, h, maxval = (int(t) for t in _read_tokens(f, 3))
        if maxval != 255:
            raise ValueError(f"{path}: only 8-bit PGM supported, maxval {maxval}")
        data = f.read(w * h)
        if len(data) != w * h:
            raise ValueError(f"{path}: truncated pixel data")
        return np.frombuffer(data, dtype=np.uint8).reshape(h, w)


def read_pgm_float(path, dtype=np.float32):
    return read_pgm(path).astype(dtype) / dtype(255.0)
