"""Command-line surface: gen-data | train | eval | recognize | visualize.

Config files are flat `key = value` lines with `#` comments; command-line
flags override file values. Errors exit nonzero with one line on stderr.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import morn as morn_mod
from .asrn import export_attention_strip
from .autodiff import Tensor
from .imageio import read_pgm, write_pgm
from .metrics import EvalReport
from .synthdata import DistortionRanges, load_dataset, make_dataset
from .trainer import (TrainConfig, config_from_mapping, evaluate_model,
                      load_checkpoint, run_curriculum)


def parse_config_file(path) -> dict:
    out = {}
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{ln}: expected 'key = value'")
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def _load_train_config(args) -> TrainConfig:
    kv = parse_config_file(args.config) if args.config else {}
    return config_from_mapping(kv)


def cmd_gen_data(args) -> int:
    kv = parse_config_file(args.config) if args.config else {}
    ranges = DistortionRanges(
        rotation=float(kv.get("rotation_range", DistortionRanges.rotation)),
        shear=float(kv.get("shear_range", DistortionRanges.shear)),
        curve=float(kv.get("curve_range", DistortionRanges.curve)),
        noise=float(kv.get("noise_level", DistortionRanges.noise)),
    )
    samples = make_dataset(args.count, args.tier, args.seed, out_dir=args.out,
                           ranges=ranges)
    print(f"wrote {len(samples)} {args.tier} samples to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_train_config(args)
    if args.data:
        cfg = type(cfg)(**{**cfg.__dict__,
                           "data_regular": f"{args.data}/regular",
                           "data_irregular": f"{args.data}/irregular"})
    if args.no_fp:
        cfg = type(cfg)(**{**cfg.__dict__, "fp": False})
    stages = (1, 2, 3) if args.stage == "all" else (int(args.stage),)
    run_curriculum(cfg, args.out, stages=stages)
    print(f"training complete; checkpoint at {args.out}")
    return 0


def cmd_eval(args) -> int:
    ck = load_checkpoint(args.ckpt)
    images, labels, _ = load_dataset(args.data)
    free = evaluate_model(ck.model, images, labels)
    print(f"lexicon-free\taccuracy {free.word_accuracy:.4f}\t"
          f"edit-distance {free.total_edit_distance}")
    report = free
    if args.lexicon:
        with open(args.lexicon) as f:
            words = [w.strip() for w in f if w.strip()]
        constrained = evaluate_model(ck.model, images, labels, lexicon=words)
        print(f"lexicon\taccuracy {constrained.word_accuracy:.4f}\t"
              f"edit-distance {constrained.total_edit_distance}")
        report = constrained
    if args.report:
        report.write(args.report)
    return 0


def _read_image(path) -> np.ndarray:
    img = read_pgm(path).astype(np.float32) / 255.0
    return img[None]


def cmd_recognize(args) -> int:
    ck = load_checkpoint(args.ckpt)
    model = ck.model
    model.set_training(False)
    x = Tensor(_read_image(args.image).astype(model.dtype))
    if model.use_morn:
        rectified, _ = model.morn.rectify(x)
    else:
        rectified = x
    h = model.asrn.encode(rectified)
    text, _ = model.asrn.decode_greedy(h)
    if args.save_rectified:
        write_pgm(args.save_rectified, rectified.data[0])
    print(text)
    return 0


def cmd_visualize(args) -> int:
    import os

    ck = load_checkpoint(args.ckpt)
    model = ck.model
    model.set_training(False)
    x = Tensor(_read_image(args.image).astype(model.dtype))
    os.makedirs(args.out, exist_ok=True)
    field = model.morn.forward(x)
    paths = morn_mod.export_offset_heatmap(field, f"{args.out}/offsets")
    rectified, _ = model.morn.rectify(x) if model.use_morn else (x, None)
    h = model.asrn.encode(rectified)
    text, trace = model.asrn.decode_greedy(h)
    strip = export_attention_strip(trace, f"{args.out}/attention.pgm")
    write_pgm(f"{args.out}/rectified.pgm", rectified.data[0])
    print(f"prediction: {text}")
    print("wrote " + " ".join(paths + [strip, f"{args.out}/rectified.pgm"]))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="moran",
                                 description="scene-text recognizer with learned rectification")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--config", default=None)
    g.add_argument("--out", required=True)
    g.add_argument("--tier", required=True, choices=["regular", "irregular"])
    g.add_argument("--count", required=True, type=int)
    g.add_argument("--seed", required=True, type=int)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="run the staged curriculum")
    t.add_argument("--config", default=None)
    t.add_argument("--data", default=None,
                   help="directory holding regular/ and irregular/ datasets")
    t.add_argument("--out", required=True)
    t.add_argument("--no-fp", action="store_true",
                   help="disable the fractional-pickup perturbation")
    t.add_argument("--stage", default="all", choices=["1", "2", "3", "all"])
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--lexicon", default=None)
    e.add_argument("--report", default=None)
    e.set_defaults(fn=cmd_eval)

    r = sub.add_parser("recognize", help="read one PGM image")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--image", required=True)
    r.add_argument("--save-rectified", default=None)
    r.set_defaults(fn=cmd_recognize)

    v = sub.add_parser("visualize", help="offset heatmaps and attention strip")
    v.add_argument("--ckpt", required=True)
    v.add_argument("--image", required=True)
    v.add_argument("--out", required=True)
    v.set_defaults(fn=cmd_visualize)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
