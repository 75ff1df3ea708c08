"""Training: sequence loss, ADADELTA, the three-stage schedule, checkpoints.

Stage 1 trains the recognizer alone (regular tier, then irregular). Stage 2
freezes a copy of the regular-phase recognizer as a guide and trains the
rectifier through it; the live recognizer is untouched, so its parameters
leave stage 2 bit-identical. Stage 3 fine-tunes both nets jointly at the
reduced learning rate. Every random draw comes from one seeded stream whose
state is checkpointed, so a run resumes onto the identical trace.
"""

from __future__ import annotations

import ast
import os
from dataclasses import dataclass, fields, replace

import numpy as np

from .asrn import AsrnConfig, AsrnNet, targets_from_labels
from .autodiff import Rng, Tape, Tensor, derive_seed
from .backend import kernels as K
from .metrics import EvalReport
from .morn import MornConfig, MornNet
from .synthdata import load_dataset

CKPT_MAGIC = "MORAN-CKPT"
CKPT_VERSION = 1


# ---------------------------------------------------------------------------
# model wrapper


class Moran:
    """Rectifier + recognizer pair with prefixed parameter names."""

    def __init__(self, morn_cfg: MornConfig, asrn_cfg: AsrnConfig, seed: int,
                 dtype=np.float32, preset="custom"):
        init_rng = Rng(derive_seed(seed, 101))
        self.morn = MornNet(morn_cfg, init_rng, dtype)
        self.asrn = AsrnNet(asrn_cfg, init_rng, dtype)
        self.seed = seed
        self.preset = preset
        self.use_morn = False  # flips when the rectifier has been trained (stage >= 2)

    @property
    def dtype(self):
        return self.asrn.dtype

    def named_params(self):
        return ([("morn." + n, p) for n, p in self.morn.named_params()]
                + [("asrn." + n, p) for n, p in self.asrn.named_params()])

    def named_buffers(self):
        return ([("morn." + n, b) for n, b in self.morn.named_buffers()]
                + [("asrn." + n, b) for n, b in self.asrn.named_buffers()])

    def set_training(self, flag: bool):
        self.morn.training = flag
        self.asrn.training = flag


MODEL_PRESETS = {
    "full": (MornConfig.full, AsrnConfig.full),
    "toy": (MornConfig.toy, AsrnConfig.toy),
}


def build_model(preset: str, seed: int, dtype=np.float32) -> Moran:
    try:
        mk_morn, mk_asrn = MODEL_PRESETS[preset]
    except KeyError:
        raise ValueError(f"unknown model preset {preset!r}") from None
    return Moran(mk_morn(), mk_asrn(), seed, dtype, preset=preset)


# ---------------------------------------------------------------------------
# loss


def batch_loss(images: np.ndarray, labels, asrn: AsrnNet, morn: MornNet = None,
               fp_on=False, rng: Rng = None):
    """Mean-over-batch teacher-forced negative log-likelihood (end token scored)."""
    targets, lengths = targets_from_labels(labels, asrn.config.max_steps)
    x = Tensor(np.ascontiguousarray(images, dtype=asrn.dtype))
    if morn is not None:
        x, _ = morn.rectify(x)
    h = asrn.encode(x)
    total = asrn.teacher_forced_nll(h, targets, lengths, fp_on=fp_on, rng=rng)
    return total * (1.0 / len(labels))


def sequence_loss(samples, model: Moran, fp_on=False, rng: Rng = None):
    """Loss of a batch of Samples through the model's current pipeline."""
    images = np.stack([s.image for s in samples])
    labels = [s.label for s in samples]
    return batch_loss(images, labels, model.asrn,
                      model.morn if model.use_morn else None, fp_on, rng)


# ---------------------------------------------------------------------------
# optimizer


class Adadelta:
    """Squared-gradient / squared-update EMAs; update scaled by lr.

    Parameters whose requires_grad flag is off (frozen) are not touched."""

    def __init__(self, rho=0.95, eps=1e-6):
        self.rho = rho
        self.eps = eps
        self.state: dict = {}

    def _slot(self, name, p):
        st = self.state.get(name)
        if st is None:
            st = (np.zeros_like(p.data), np.zeros_like(p.data))
            self.state[name] = st
        if st[0].shape != p.data.shape:
            raise ValueError(f"optimizer state for {name} has shape {st[0].shape}, "
                             f"parameter has {p.data.shape}")
        return st

    def step(self, named_params, lr: float):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        for name, p in named_params:
            if not p.requires_grad:
                continue
            eg2, ed2 = self._slot(name, p)
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            K.adadelta_update(p.data, g, eg2, ed2, lr, self.rho, self.eps)


# ---------------------------------------------------------------------------
# checkpoints


def _config_lines(tag, cfg):
    return [f"{tag} {f.name} {getattr(cfg, f.name)!r}" for f in fields(cfg)]


def _parse_config(cls, kv):
    return cls(**{k: ast.literal_eval(v) for k, v in kv.items()})


def save_checkpoint(path, model: Moran, optimizer: Adadelta = None, rng: Rng = None,
                    cursor=(0, 0)):
    """Text header + little-endian float32 payload; see load_checkpoint."""
    entries = []  # (kind, name, array)
    for name, p in model.named_params():
        entries.append(("param", name, p.data))
    for name, b in model.named_buffers():
        entries.append(("buf", name, b))
    if optimizer is not None:
        for name, (eg2, ed2) in optimizer.state.items():
            entries.append(("opt", name + ".eg2", eg2))
            entries.append(("opt", name + ".ed2", ed2))

    header = [f"{CKPT_MAGIC} {CKPT_VERSION}",
              f"preset {model.preset}",
              f"dtype {np.dtype(model.dtype).name}"]
    header += _config_lines("morn", model.morn.config)
    header += _config_lines("asrn", model.asrn.config)
    header.append(f"use_morn {int(model.use_morn)}")
    header.append(f"cursor {cursor[0]} {cursor[1]}")
    header.append(f"rng {rng.state if rng is not None else 0}")
    payload = bytearray()
    for kind, name, arr in entries:
        dims = ",".join(str(d) for d in arr.shape) or "scalar"
        header.append(f"tensor {kind} {name} {dims} {len(payload)} {arr.size}")
        payload += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    header.append("end")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode())
        f.write(bytes(payload))


@dataclass
class Checkpoint:
    model: Moran
    opt_state: dict      # name -> (eg2, ed2) arrays
    rng_state: int
    cursor: tuple        # (stage, global iteration)

    def make_optimizer(self, rho=0.95, eps=1e-6) -> Adadelta:
        opt = Adadelta(rho, eps)
        opt.state = {k: (v[0].copy(), v[1].copy()) for k, v in self.opt_state.items()}
        return opt


def load_checkpoint(path) -> Checkpoint:
    try:
        blob = open(path, "rb").read()
    except OSError as e:
        raise ValueError(f"cannot read checkpoint: {e}") from None
    mark = blob.find(b"\nend\n")
    if mark < 0 or not blob.startswith(CKPT_MAGIC.encode()):
        raise ValueError(f"{path}: not a checkpoint file")
    head_lines = blob[:mark].decode().split("\n")
    payload = blob[mark + len(b"\nend\n"):]
    magic, version = head_lines[0].split()
    if int(version) != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")

    kv = {"morn": {}, "asrn": {}}
    tensors = []
    meta = {}
    for line in head_lines[1:]:
        parts = line.split(" ")
        if parts[0] == "tensor":
            _, kind, name, dims, off, count = parts
            shape = () if dims == "scalar" else tuple(int(d) for d in dims.split(","))
            tensors.append((kind, name, shape, int(off), int(count)))
        elif parts[0] in ("morn", "asrn"):
            kv[parts[0]][parts[1]] = " ".join(parts[2:])
        else:
            meta[parts[0]] = " ".join(parts[1:])

    dtype = np.dtype(meta.get("dtype", "float32"))
    model = Moran(_parse_config(MornConfig, kv["morn"]),
                  _parse_config(AsrnConfig, kv["asrn"]),
                  seed=0, dtype=dtype, preset=meta.get("preset", "custom"))
    model.use_morn = bool(int(meta.get("use_morn", "0")))

    arrays = {"param": {}, "buf": {}, "opt": {}}
    for kind, name, shape, off, count in tensors:
        end = off + 4 * count
        if end > len(payload):
            raise ValueError(f"{path}: truncated payload for {name}")
        arr = np.frombuffer(payload[off:end], dtype="<f4").reshape(shape)
        arrays[kind][name] = arr
    expect = sum(c for _, _, _, _, c in tensors) * 4
    if len(payload) != expect:
        raise ValueError(f"{path}: payload is {len(payload)} bytes, header declares {expect}")

    named = dict(arrays["param"])
    named.update(arrays["buf"])
    morn_arrays = {n[len("morn."):]: a for n, a in named.items() if n.startswith("morn.")}
    asrn_arrays = {n[len("asrn."):]: a for n, a in named.items() if n.startswith("asrn.")}
    model.morn.load_arrays(morn_arrays)
    model.asrn.load_arrays(asrn_arrays)

    opt_state = {}
    for name, arr in arrays["opt"].items():
        base, slot = name.rsplit(".", 1)
        pair = opt_state.setdefault(base, [None, None])
        pair[0 if slot == "eg2" else 1] = arr.astype(dtype).copy()
    opt_state = {k: (v[0], v[1]) for k, v in opt_state.items()
                 if v[0] is not None and v[1] is not None}

    stage, it = meta.get("cursor", "0 0").split()
    return Checkpoint(model, opt_state, int(meta.get("rng", "0")), (int(stage), int(it)))


# ---------------------------------------------------------------------------
# evaluation


def evaluate_model(model: Moran, images, labels, lexicon=None, batch=64,
                   max_steps=None) -> EvalReport:
    """Greedy (or lexicon-constrained) decoding over a dataset; deterministic."""
    was_training = model.asrn.training
    model.set_training(False)
    preds = []
    try:
        for i in range(0, len(labels), batch):
            x = Tensor(np.ascontiguousarray(images[i : i + batch], dtype=model.dtype))
            if model.use_morn:
                x, _ = model.morn.rectify(x)
            h = model.asrn.encode(x)
            if lexicon is None:
                preds.extend(model.asrn.decode_greedy_batch(h, max_steps))
            else:
                preds.extend(model.asrn.decode_lexicon_batch(h, lexicon, max_steps))
    finally:
        model.set_training(was_training)
    return EvalReport.from_pairs(list(zip(preds, labels)))


# ---------------------------------------------------------------------------
# curriculum


@dataclass(frozen=True)
class StageSpec:
    name: str
    stage: int       # 1 | 2 | 3
    trains: str      # asrn | morn | joint
    tier: str        # dataset the phase consumes
    iters: int
    lr: float
    rectified: bool  # rectifier in the loss path
    guided: bool     # loss flows through the frozen regular-phase recognizer


@dataclass
class TrainConfig:
    seed: int = 0
    model: str = "toy"
    batch_size: int = 64
    stage1_iters: int = 3000
    stage2_iters: int = 500
    stage3_iters: int = 1500
    lr_early: float = 1.0   # stages 1-2
    lr_final: float = 0.01  # stage 3
    fp: bool = True
    rho: float = 0.95
    eps: float = 1e-6
    dtype: str = "float32"
    data_regular: str = ""
    data_irregular: str = ""
    eval_data: str = ""
    eval_every: int = 500
    eval_count: int = 200

    def phases(self):
        if min(self.stage1_iters, self.stage2_iters, self.stage3_iters) < 1:
            raise ValueError("stage iteration counts must be >= 1")
        if self.lr_early <= 0 or self.lr_final <= 0:
            raise ValueError("learning rates must be positive")
        half = self.stage1_iters // 2
        return [
            StageSpec("stage1-regular", 1, "asrn", "regular", half,
                      self.lr_early, False, False),
            StageSpec("stage1-irregular", 1, "asrn", "irregular",
                      self.stage1_iters - half, self.lr_early, False, False),
            StageSpec("stage2", 2, "morn", "irregular", self.stage2_iters,
                      self.lr_early, True, True),
            StageSpec("stage3", 3, "joint", "irregular", self.stage3_iters,
                      self.lr_final, True, False),
        ]


def config_from_mapping(kv: dict) -> TrainConfig:
    cfg = TrainConfig()
    casts = {f.name: type(getattr(cfg, f.name)) for f in fields(cfg)}
    out = {}
    for k, v in kv.items():
        if k not in casts:
            raise ValueError(f"unknown config key {k!r}")
        t = casts[k]
        out[k] = (v in ("1", "true", "on", "yes", True)) if t is bool else t(v)
    return replace(cfg, **out)


class Trainer:
    def __init__(self, config: TrainConfig, out_path: str):
        self.cfg = config
        self.out = out_path
        self.data = {}
        for tier, path in (("regular", config.data_regular),
                           ("irregular", config.data_irregular)):
            if not path or not os.path.isdir(path):
                raise ValueError(f"{tier} dataset directory not found: {path!r}")
            images, labels, _ = load_dataset(path)
            self.data[tier] = (images, labels)
        self.eval_set = None
        if config.eval_data:
            images, labels, _ = load_dataset(config.eval_data)
            n = min(config.eval_count, len(labels)) if config.eval_count else len(labels)
            self.eval_set = (images[:n], list(labels[:n]))
        self.log_lines = []

    # -- internals ---------------------------------------------------------

    def _log(self, iteration, stage, loss, acc):
        acc_s = "-" if acc is None else repr(acc)
        self.log_lines.append(f"{iteration}\t{stage}\t{loss!r}\t{acc_s}")

    def _write_log(self):
        with open(self.out + ".log", "w") as f:
            f.write("\n".join(self.log_lines) + "\n")

    def _trainable(self, model, spec: StageSpec):
        if spec.trains == "asrn":
            nets = [("asrn", model.asrn)]
        elif spec.trains == "morn":
            nets = [("morn", model.morn)]
        else:
            nets = [("morn", model.morn), ("asrn", model.asrn)]
        named = []
        for prefix, net in nets:
            named += [(f"{prefix}.{n}", p) for n, p in net.named_params()]
        return nets, named

    def _run_phase(self, model, spec: StageSpec, opt, rng, start, end=None,
                   guide=None, iter_base=0):
        images, labels = self.data[spec.tier]
        n = len(labels)
        nets, named = self._trainable(model, spec)
        asrn = guide if guide is not None else model.asrn
        morn = model.morn if spec.rectified else None
        if end is None:
            end = spec.iters
        for it in range(start, end):
            idx = rng.randint_array((self.cfg.batch_size,), 0, n - 1)
            batch_labels = [labels[i] for i in idx]
            for _, net in nets:
                net.zero_grads()
            with Tape() as tape:
                loss = batch_loss(images[idx], batch_labels, asrn, morn,
                                  fp_on=self.cfg.fp, rng=rng)
                tape.backward(loss)
            opt.step(named, spec.lr)
            gi = iter_base + it + 1
            acc = None
            if self.eval_set is not None and self.cfg.eval_every and gi % self.cfg.eval_every == 0:
                acc = evaluate_model(model, *self.eval_set).word_accuracy
            self._log(gi, spec.stage, float(loss.data), acc)
        return spec.iters

    # -- public --------------------------------------------------------------

    def run(self, stages=(1, 2, 3), resume_from=None, stop_after=None):
        """Run the requested stages; returns the trained model.

        Stage 1 starts fresh; later stages load the preceding stage file when
        stage 1 is not part of this invocation. `resume_from` continues a
        mid-run checkpoint on its exact trace; `stop_after` halts once that
        many global iterations exist, checkpointing to the output path."""
        cfg = self.cfg
        phases = cfg.phases()
        bounds = np.cumsum([0] + [p.iters for p in phases])

        if resume_from is not None:
            ck = load_checkpoint(resume_from)
            model = ck.model
            rng = Rng(0)
            rng.state = ck.rng_state
            opt = ck.make_optimizer(cfg.rho, cfg.eps)
            done = ck.cursor[1]
        elif 1 in stages:
            model = build_model(cfg.model, cfg.seed, np.dtype(cfg.dtype))
            rng = Rng(derive_seed(cfg.seed, 202))
            opt = Adadelta(cfg.rho, cfg.eps)
            done = 0
        else:
            first = min(stages)
            prev = f"{self.out}.stage{first - 1}"
            ck = load_checkpoint(prev)
            model = ck.model
            rng = Rng(0)
            rng.state = ck.rng_state
            opt = Adadelta(cfg.rho, cfg.eps)
            done = int(bounds[{2: 2, 3: 3}[first]])

        model.set_training(True)
        guide = None
        last_stage = ck.cursor[0] if resume_from is not None else min(stages)
        for pi, spec in enumerate(phases):
            lo, hi = int(bounds[pi]), int(bounds[pi + 1])
            if spec.stage not in stages or done >= hi:
                continue
            if stop_after is not None and done >= stop_after:
                break
            if spec.stage >= 2:
                model.use_morn = True
            if spec.guided and guide is None:
                guide = self._load_guide(model)
            start = max(done - lo, 0)
            if start == 0 and spec.stage > 1 and pi > 0:
                opt = Adadelta(cfg.rho, cfg.eps)  # fresh accumulators per stage
            end = spec.iters
            if stop_after is not None:
                end = min(end, stop_after - lo)
            self._run_phase(model, spec, opt, rng, start, end,
                            guide=guide if spec.guided else None, iter_base=lo)
            done = lo + end
            last_stage = spec.stage
            if done < hi:
                break  # stopped mid-phase; the final save below records the cursor
            if spec.name == "stage1-regular":
                save_checkpoint(f"{self.out}.stage1r", model, opt, rng, (1, done))
            elif spec.name == "stage1-irregular":
                save_checkpoint(f"{self.out}.stage1", model, opt, rng, (1, done))
            elif spec.name == "stage2":
                save_checkpoint(f"{self.out}.stage2", model, opt, rng, (2, done))
            elif spec.name == "stage3":
                save_checkpoint(f"{self.out}.stage3", model, opt, rng, (3, done))
        save_checkpoint(self.out, model, opt, rng, (last_stage, done))
        self._write_log()
        return model

    def _load_guide(self, model):
        """Frozen copy of the regular-phase recognizer that steers stage 2."""
        path = f"{self.out}.stage1r"
        if not os.path.exists(path):
            raise ValueError(f"stage 2 needs the regular-phase checkpoint at {path}")
        ck = load_checkpoint(path)
        guide = ck.model.asrn
        guide.set_frozen(True)
        guide.training = True
        return guide


def run_curriculum(config: TrainConfig, out_path: str, stages=(1, 2, 3),
                   resume_from=None) -> Moran:
    return Trainer(config, out_path).run(stages, resume_from)
