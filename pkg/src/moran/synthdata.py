"""Deterministic synthetic distorted-text generator.

Strings are rendered from an embedded 5x7 bitmap font onto 32x100 canvases,
then warped (rotation about the center, horizontal shear, sinusoidal
baseline curve) by inverse-mapped bilinear sampling, plus optional seeded
Gaussian pixel noise. Every sample is a pure function of (label, spec,
sample seed), so datasets regenerate bit-exactly from their manifest.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .autodiff.rng import Rng, derive_seed
from .imageio import read_pgm, write_pgm

IMAGE_HW = (32, 100)
MAX_LABEL_LEN = 8

# 5x7 glyphs for the 36 character classes ('#' = ink)
_FONT_ROWS = {
    "a": (".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"),
    "b": ("####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."),
    "c": (".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."),
    "d": ("####.", "#...#", "#...#", "#...#", "#...#", "#...#", "####."),
    "e": ("#####", "#....", "#....", "####.", "#....", "#....", "#####"),
    "f": ("#####", "#....", "#....", "####.", "#....", "#....", "#...."),
    "g": (".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".####"),
    "h": ("#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"),
    "i": (".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."),
    "j": ("..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."),
    "k": ("#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"),
    "l": ("#....", "#....", "#....", "#....", "#....", "#....", "#####"),
    "m": ("#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"),
    "n": ("#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#", "#...#"),
    "o": (".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."),
    "p": ("####.", "#...#", "#...#", "####.", "#....", "#....", "#...."),
    "q": (".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"),
    "r": ("####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"),
    "s": (".####", "#....", "#....", ".###.", "....#", "....#", "####."),
    "t": ("#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."),
    "u": ("#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."),
    "v": ("#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."),
    "w": ("#...#", "#...#", "#...#", "#.#.#", "#.#.#", "##.##", "#...#"),
    "x": ("#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"),
    "y": ("#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."),
    "z": ("#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"),
    "0": (".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."),
    "1": ("..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."),
    "2": (".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"),
    "3": (".###.", "#...#", "....#", "..##.", "....#", "#...#", ".###."),
    "4": ("...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."),
    "5": ("#####", "#....", "####.", "....#", "....#", "#...#", ".###."),
    "6": (".###.", "#....", "#....", "####.", "#...#", "#...#", ".###."),
    "7": ("#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."),
    "8": (".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."),
    "9": (".###.", "#...#", "#...#", ".####", "....#", "....#", ".###."),
}

CHARSET = "abcdefghijklmnopqrstuvwxyz0123456789"


class GlyphAtlas:
    """Embedded monochrome bitmaps, one per character class."""

    def __init__(self, font=_FONT_ROWS):
        self.bitmaps = {}
        for c in CHARSET:
            if c not in font:
                raise ValueError(f"font is missing glyph for {c!r}")
            rows = font[c]
            self.bitmaps[c] = np.array([[ch == "#" for ch in row] for row in rows], dtype=bool)
        seen = {}
        for c, bm in self.bitmaps.items():
            key = bm.tobytes()
            if key in seen:
                raise ValueError(f"glyphs for {seen[key]!r} and {c!r} are identical")
            seen[key] = c

    def glyph(self, c: str) -> np.ndarray:
        try:
            return self.bitmaps[c]
        except KeyError:
            raise ValueError(f"character {c!r} not in atlas") from None


DEFAULT_ATLAS = GlyphAtlas()


@dataclass(frozen=True)
class DistortionSpec:
    rotation: float = 0.0          # degrees about the image center
    perspective_shear: float = 0.0  # horizontal shear per vertical pixel offset
    curve_amplitude: float = 0.0   # pixels of sinusoidal baseline displacement
    noise_level: float = 0.0       # std of additive pixel noise

    def is_identity(self) -> bool:
        return (self.rotation == 0 and self.perspective_shear == 0
                and self.curve_amplitude == 0 and self.noise_level == 0)


@dataclass(frozen=True)
class DistortionRanges:
    rotation: float = 25.0
    shear: float = 0.3
    curve: float = 6.0
    noise: float = 0.03  # fixed per-tier std, not drawn per sample


@dataclass
class Sample:
    image: np.ndarray  # (1, 32, 100) float32 in [0, 1]
    label: str
    spec: DistortionSpec
    seed: int


def render(label: str, atlas: GlyphAtlas = DEFAULT_ATLAS) -> np.ndarray:
    """Lay the glyphs out left to right (1-px gaps), integer-upscale to fit,
    center on the canvas. Background 0, ink 1."""
    if not 1 <= len(label) <= MAX_LABEL_LEN:
        raise ValueError(f"label length must be 1..{MAX_LABEL_LEN}, got {len(label)}")
    glyphs = [atlas.glyph(c) for c in label]
    h, w = IMAGE_HW
    strip = np.zeros((7, 6 * len(label) - 1), dtype=bool)
    for i, g in enumerate(glyphs):
        strip[:, 6 * i : 6 * i + 5] = g
    scale = max(1, min(h // strip.shape[0], w // strip.shape[1]))
    big = np.kron(strip, np.ones((scale, scale), dtype=bool))
    img = np.zeros((h, w), dtype=np.float32)
    r0 = (h - big.shape[0]) // 2
    c0 = (w - big.shape[1]) // 2
    img[r0 : r0 + big.shape[0], c0 : c0 + big.shape[1]] = big
    return img[None]


def _warp_bilinear(img: np.ndarray, src_r: np.ndarray, src_c: np.ndarray) -> np.ndarray:
    """Sample img at fractional source coords; outside pixels read as 0."""
    h, w = img.shape
    r0 = np.floor(src_r).astype(np.int64)
    c0 = np.floor(src_c).astype(np.int64)
    fr = (src_r - r0).astype(img.dtype)
    fc = (src_c - c0).astype(img.dtype)
    out = np.zeros_like(src_r, dtype=img.dtype)
    for dr, dc, wgt in (
        (0, 0, (1 - fr) * (1 - fc)),
        (0, 1, (1 - fr) * fc),
        (1, 0, fr * (1 - fc)),
        (1, 1, fr * fc),
    ):
        rr = r0 + dr
        cc = c0 + dc
        valid = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        vals = np.zeros_like(out)
        vals[valid] = img[rr[valid], cc[valid]]
        out += wgt * vals
    return out


def distort(image: np.ndarray, spec: DistortionSpec, rng: Rng) -> np.ndarray:
    """Inverse-mapped warp (curve, then shear, then rotation inverses) plus
    seeded Gaussian noise clamped to [0, 1]."""
    if image.shape != (1,) + IMAGE_HW:
        raise ValueError(f"expected (1, {IMAGE_HW[0]}, {IMAGE_HW[1]}) image, got {image.shape}")
    img = image[0]
    h, w = img.shape
    out = img
    if spec.rotation or spec.perspective_shear or spec.curve_amplitude:
        jj, ii = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
        cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
        i1 = ii - spec.curve_amplitude * np.sin(np.pi * jj / w)
        j1 = jj - spec.perspective_shear * (i1 - cy)
        th = math.radians(spec.rotation)
        di, dj = i1 - cy, j1 - cx
        src_r = cy + math.cos(th) * di - math.sin(th) * dj
        src_c = cx + math.sin(th) * di + math.cos(th) * dj
        out = _warp_bilinear(img, src_r, src_c)
    if spec.noise_level > 0:
        noise = rng.normal_array(out.shape) * spec.noise_level
        out = out + noise.astype(out.dtype)
    return np.clip(out, 0.0, 1.0).astype(np.float32)[None]


def draw_label(rng: Rng) -> str:
    n = rng.randint(1, MAX_LABEL_LEN)
    return "".join(CHARSET[rng.randint(0, len(CHARSET) - 1)] for _ in range(n))


def draw_spec(rng: Rng, tier: str, ranges: DistortionRanges) -> DistortionSpec:
    if tier == "regular":
        return DistortionSpec()
    return DistortionSpec(
        rotation=rng.uniform(-ranges.rotation, ranges.rotation),
        perspective_shear=rng.uniform(-ranges.shear, ranges.shear),
        curve_amplitude=rng.uniform(0.0, ranges.curve),
        noise_level=ranges.noise,
    )


def build_sample(label: str, spec: DistortionSpec, sample_seed: int,
                 atlas: GlyphAtlas = DEFAULT_ATLAS) -> Sample:
    """Pure (label, spec, seed) -> Sample; the noise stream is derived from
    the sample seed alone, so manifests regenerate images bit-exactly."""
    noise_rng = Rng(derive_seed(sample_seed, 2))
    return Sample(distort(render(label, atlas), spec, noise_rng), label, spec, sample_seed)


def make_dataset(count: int, tier: str, seed: int, out_dir=None,
                 ranges: DistortionRanges = DistortionRanges()):
    """Generate `count` samples; optionally write images + manifest + meta."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if tier not in ("regular", "irregular"):
        raise ValueError(f"tier must be regular|irregular, got {tier!r}")
    samples = []
    for i in range(count):
        sample_seed = derive_seed(seed, i)
        draw_rng = Rng(derive_seed(sample_seed, 1))
        label = draw_label(draw_rng)
        spec = draw_spec(draw_rng, tier, ranges)
        samples.append(build_sample(label, spec, sample_seed))
    if out_dir is not None:
        write_dataset(samples, out_dir, tier=tier, seed=seed, ranges=ranges)
    return samples


def manifest_line(rel_path: str, s: Sample) -> str:
    return "\t".join([rel_path, s.label, repr(s.spec.rotation),
                      repr(s.spec.perspective_shear), repr(s.spec.curve_amplitude),
                      str(s.seed)])


def write_dataset(samples, out_dir, tier="", seed=0, ranges=DistortionRanges()):
    os.makedirs(out_dir, exist_ok=True)
    lines = []
    for i, s in enumerate(samples):
        rel = f"img_{i:05d}.pgm"
        write_pgm(os.path.join(out_dir, rel), s.image[0])
        lines.append(manifest_line(rel, s))
    with open(os.path.join(out_dir, "manifest.txt"), "w") as f:
        f.write("\n".join(lines) + "\n")
    with open(os.path.join(out_dir, "meta.txt"), "w") as f:
        f.write(f"tier = {tier}\nseed = {seed}\ncount = {len(samples)}\n"
                f"noise_level = {ranges.noise!r}\nrotation_range = {ranges.rotation!r}\n"
                f"shear_range = {ranges.shear!r}\ncurve_range = {ranges.curve!r}\n")


@dataclass(frozen=True)
class ManifestRecord:
    path: str
    label: str
    rotation: float
    shear: float
    curve: float
    seed: int


def read_manifest(path) -> list:
    records = []
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 6:
                raise ValueError(f"{path}:{ln}: expected 6 tab-separated fields")
            records.append(ManifestRecord(parts[0], parts[1], float(parts[2]),
                                          float(parts[3]), float(parts[4]), int(parts[5])))
    return records


def load_dataset(data_dir):
    """Returns (images (N,1,32,100) float32, labels, manifest records)."""
    manifest = os.path.join(data_dir, "manifest.txt")
    if not os.path.exists(manifest):
        raise ValueError(f"no manifest.txt in {data_dir}")
    records = read_manifest(manifest)
    images = np.zeros((len(records), 1) + IMAGE_HW, dtype=np.float32)
    labels = []
    for i, rec in enumerate(records):
        images[i, 0] = read_pgm(os.path.join(data_dir, rec.path)).astype(np.float32) / 255.0
        labels.append(rec.label)
    return images, labels, records


def read_meta(data_dir) -> dict:
    meta = {}
    path = os.path.join(data_dir, "meta.txt")
    if os.path.exists(path):
        with open(path) as f:
            for line in f:
                if "=" in line:
                    k, v = line.split("=", 1)
                    meta[k.strip()] = v.strip()
    return meta
