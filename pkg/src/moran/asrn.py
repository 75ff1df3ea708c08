"""Recognition sub-network: conv stack + two bidirectional LSTM layers over
the width axis, then a GRU decoder that attends over the feature sequence
and emits one of 37 classes per step (36 characters + end token).

A reserved 38th embedding row (never a decoder output) feeds the first
step; teacher forcing feeds ground truth during training and the previous
prediction during inference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ops
from .autodiff.engine import Tensor
from .fpickup import fp_perturb, fp_sample
from .imageio import write_pgm
from .layers import Net

LOG_FLOOR = 1e-12

CHARS = "abcdefghijklmnopqrstuvwxyz0123456789"


class Vocabulary:
    """36 characters + end token (id 36); id 37 is the embedding-only start row."""

    chars = CHARS
    size = 37
    eos_id = 36
    start_id = 37

    def __init__(self):
        self._to_id = {c: i for i, c in enumerate(CHARS)}

    def char_to_id(self, c: str) -> int:
        try:
            return self._to_id[c]
        except KeyError:
            raise ValueError(f"character {c!r} not in vocabulary") from None

    def id_to_char(self, i: int) -> str:
        if not 0 <= i < len(CHARS):
            raise ValueError(f"id {i} is not a character class")
        return CHARS[i]

    def encode(self, label: str) -> list:
        return [self.char_to_id(c) for c in label.lower()]

    def decode(self, ids) -> str:
        return "".join(self.id_to_char(int(i)) for i in ids)


VOCAB = Vocabulary()


@dataclass(frozen=True)
class AsrnConfig:
    input_hw: tuple = (32, 100)
    # (channels, pool) per conv block; pool = ((sh, sw), (ph, pw)) with k2
    blocks: tuple = (
        (64, ((2, 2), (0, 0))),
        (128, ((2, 2), (0, 0))),
        (256, None),
        (256, ((2, 1), (0, 1))),
        (512, None),
        (512, ((2, 1), (0, 1))),
    )
    final_channels: int = 512  # k2 s1 conv that collapses the height to 1
    blstm_hidden: int = 256
    feat_dim: int = 256
    attn_dim: int = 256
    embed_dim: int = 128
    dec_hidden: int = 256
    max_steps: int = 26  # decoder step budget T

    @classmethod
    def full(cls):
        return cls()

    @classmethod
    def toy(cls):
        return cls(
            blocks=(
                (8, ((2, 2), (0, 0))),
                (12, ((2, 2), (0, 0))),
                (12, None),
                (12, ((2, 1), (0, 1))),
                (16, None),
                (16, ((2, 1), (0, 1))),
            ),
            final_channels=24,
            blstm_hidden=24,
            feat_dim=24,
            attn_dim=32,
            embed_dim=24,
            dec_hidden=48,
        )


class AsrnNet(Net):
    def __init__(self, config: AsrnConfig, rng, dtype=np.float32):
        super().__init__(dtype)
        self.config = config
        cin = 1
        for i, (cout, _) in enumerate(config.blocks):
            self.add_conv(f"conv{i}", cin, cout, 3, rng, bn=True)
            cin = cout
        self.add_conv("convF", cin, config.final_channels, 2, rng, bn=True)
        h = config.blstm_hidden
        din = config.final_channels
        for li in (1, 2):
            self.add_lstm_dir(f"blstm{li}.fwd", din, h, rng)
            self.add_lstm_dir(f"blstm{li}.bwd", din, h, rng)
            self.add_linear(f"blstm{li}.proj", 2 * h, config.feat_dim, rng)
            din = config.feat_dim
        a = config.attn_dim
        self.add_linear("attn.s", config.dec_hidden, a, rng)  # carries the score bias
        self.add_linear("attn.h", config.feat_dim, a, rng, bias=False)
        self.add_linear("attn.v", a, 1, rng, bias=False)
        self.add_uniform("embed.table", (VOCAB.start_id + 1, config.embed_dim),
                         config.embed_dim, rng)
        self.add_gru("gru", config.embed_dim + config.feat_dim, config.dec_hidden, rng)
        self.add_linear("out", config.dec_hidden, VOCAB.size, rng)

    # -- encoder -------------------------------------------------------------

    def encode(self, image, trace=None):
        """Image -> (N, L, D) feature sequence (or (L, D) for a single image)."""
        cfg = self.config
        hw = cfg.input_hw
        if image.shape[-3:] != (1,) + tuple(hw):
            raise ValueError(f"encoder expects 1x{hw[0]}x{hw[1]} input, got {image.shape[-3:]}")
        batched = image.ndim == 4
        x = image if batched else ops.reshape(image, (1,) + tuple(image.shape))
        for i, (cout, pool) in enumerate(cfg.blocks):
            x = self.conv_bn_relu(f"conv{i}", x)
            if trace is not None:
                trace.append(x.shape[1:])
            if pool is not None:
                x = ops.maxpool2d(x, 2, pool[0], pool[1])
                if trace is not None:
                    trace.append(x.shape[1:])
        x = self.conv_bn_relu("convF", x, padding=0)
        if trace is not None:
            trace.append(x.shape[1:])
        n, c, hh, l = x.shape
        if hh != 1:
            raise ValueError(f"encoder stack must collapse height to 1, got {hh}")
        seq = ops.transpose(ops.reshape(x, (n, c, l)), (0, 2, 1))
        for li in (1, 2):
            p = ops.BilstmParams(self.lstm_dir_params(f"blstm{li}.fwd"),
                                 self.lstm_dir_params(f"blstm{li}.bwd"))
            seq = ops.bilstm(seq, p)
            seq = ops.linear(seq, self.params[f"blstm{li}.proj.w"],
                             self.params[f"blstm{li}.proj.b"])
            if trace is not None:
                trace.append((seq.shape[-1], 1, seq.shape[-2]))
        return seq if batched else ops.reshape(seq, seq.shape[1:])

    # -- attention decoder ----------------------------------------------------

    def attn_features(self, h):
        """Precompute the per-position attention projection, reused every step."""
        return ops.linear(h, self.params["attn.h.w"])

    def attention_weights(self, s_prev, h, hw=None):
        if hw is None:
            hw = self.attn_features(h)
        sw = ops.linear(s_prev, self.params["attn.s.w"], self.params["attn.s.b"])
        sw = ops.reshape(sw, sw.shape[:-1] + (1, sw.shape[-1]))
        u = ops.tanh(hw + sw)
        e = ops.linear(u, self.params["attn.v.w"])
        return ops.softmax(ops.reshape(e, e.shape[:-1]), axis=-1)

    @staticmethod
    def glimpse(alpha, h):
        if alpha.shape[-1] != h.shape[-2]:
            raise ValueError(f"attention length {alpha.shape[-1]} != features {h.shape[-2]}")
        a = ops.reshape(alpha, alpha.shape + (1,))
        return ops.tsum(a * h, axis=-2)

    def initial_state(self, n=None):
        shape = (self.config.dec_hidden,) if n is None else (n, self.config.dec_hidden)
        return Tensor(np.zeros(shape, dtype=self.dtype))

    def decode_step(self, y_prev, s_prev, h, mode="infer", fp=None, hw=None):
        """One attention + GRU step; returns (class probabilities, state, alpha)."""
        if mode not in ("train", "infer"):
            raise ValueError(f"mode must be train|infer, got {mode!r}")
        if fp is not None and mode != "train":
            raise ValueError("fractional pickup is a training-only perturbation")
        alpha = self.attention_weights(s_prev, h, hw)
        if fp is not None:
            alpha = fp_perturb(alpha, fp)
        g = self.glimpse(alpha, h)
        emb = ops.embedding(y_prev, self.params["embed.table"])
        x = ops.concat([emb, g], axis=-1)
        s = ops.gru_cell(x, s_prev, self.gru_params("gru"))
        y = ops.softmax(ops.linear(s, self.params["out.w"], self.params["out.b"]), axis=-1)
        return y, s, alpha

    # -- inference -------------------------------------------------------------

    def decode_greedy(self, h, max_steps=None):
        """Argmax decoding of one feature sequence until the end token or T steps.

        Returns the string and the per-emitted-step attention rows (the end
        token's row is dropped, matching how the traces are displayed)."""
        t_max = max_steps if max_steps is not None else self.config.max_steps
        if t_max < 1:
            raise ValueError("decoder budget must be >= 1")
        hw = self.attn_features(h)
        s = self.initial_state()
        y = VOCAB.start_id
        chars = []
        rows = []
        for _ in range(t_max):
            probs, s, alpha = self.decode_step(y, s, h, "infer", hw=hw)
            c = int(np.argmax(probs.data))
            if c == VOCAB.eos_id:
                break
            chars.append(VOCAB.id_to_char(c))
            rows.append(alpha.data.copy())
            y = c
        trace = np.array(rows) if rows else np.zeros((0, h.shape[-2]), dtype=self.dtype)
        return "".join(chars), trace

    def decode_greedy_batch(self, h, max_steps=None):
        t_max = max_steps if max_steps is not None else self.config.max_steps
        n = h.shape[0]
        hw = self.attn_features(h)
        s = self.initial_state(n)
        y = np.full(n, VOCAB.start_id, dtype=np.int64)
        done = np.zeros(n, dtype=bool)
        texts = [[] for _ in range(n)]
        for _ in range(t_max):
            probs, s, _ = self.decode_step(y, s, h, "infer", hw=hw)
            c = np.argmax(probs.data, axis=1)
            done |= c == VOCAB.eos_id
            for i in range(n):
                if not done[i]:
                    texts[i].append(CHARS[c[i]])
            if done.all():
                break
            y = np.where(done, VOCAB.eos_id, c)
        return ["".join(t) for t in texts]

    def decode_lexicon(self, h, lexicon, max_steps=None):
        """Teacher-force every candidate word and return the best scoring one."""
        h3 = h if h.ndim == 3 else ops.reshape(h, (1,) + tuple(h.shape))
        return self.decode_lexicon_batch(h3, lexicon, max_steps)[0]

    def decode_lexicon_batch(self, h, lexicon, max_steps=None):
        t_max = max_steps if max_steps is not None else self.config.max_steps
        if not lexicon:
            raise ValueError("lexicon must be non-empty")
        n = h.shape[0]
        hw = self.attn_features(h)
        best = np.full(n, -np.inf)
        best_word = [None] * n
        for word in lexicon:
            ids = VOCAB.encode(word)
            if len(ids) + 1 > t_max:
                raise ValueError(f"lexicon word {word!r} exceeds the decoder budget {t_max}")
            seq = [VOCAB.start_id] + ids
            targets = ids + [VOCAB.eos_id]
            s = self.initial_state(n)
            total = np.zeros(n)
            for t, tgt in enumerate(targets):
                y = np.full(n, seq[t], dtype=np.int64)
                probs, s, _ = self.decode_step(y, s, h, "infer", hw=hw)
                total += np.log(np.maximum(probs.data[:, tgt], LOG_FLOOR))
            better = total > best  # strict: earlier lexicon entry wins ties
            for i in np.nonzero(better)[0]:
                best_word[i] = word
            best = np.where(better, total, best)
        return best_word

    # -- training loss ----------------------------------------------------------

    def teacher_forced_nll(self, h, targets, lengths, fp_on=False, rng=None):
        """Sum of per-step negative log-likelihoods over a batch.

        targets: (N, Tmax) class ids, row i holding the label ids then the end
        token (padded with end tokens); lengths: label lengths. Step t is
        counted while t <= length (the end token is scored)."""
        n, t_max = targets.shape
        feat_len = h.shape[-2]
        s = self.initial_state(n)
        hw = self.attn_features(h)
        steps = int(lengths.max()) + 1
        y_prev = np.full(n, VOCAB.start_id, dtype=np.int64)
        total = None
        for t in range(steps):
            fp = fp_sample(rng, feat_len) if fp_on else None
            probs, s, _ = self.decode_step(y_prev, s, h, "train", fp=fp, hw=hw)
            nll = ops.nll_loss(probs, targets[:, t])
            mask = (t <= lengths).astype(self.dtype)
            masked = nll * Tensor(mask)
            term = ops.tsum(masked)
            total = term if total is None else total + term
            y_prev = targets[:, t]
        return total


def targets_from_labels(labels, t_max):
    """Pack labels into the (targets, lengths) arrays teacher forcing consumes."""
    n = len(labels)
    lengths = np.array([len(lb) for lb in labels], dtype=np.int64)
    if lengths.min() < 1:
        raise ValueError("labels must be non-empty")
    if lengths.max() + 1 > t_max:
        raise ValueError(f"label longer than decoder budget {t_max} allows")
    width = int(lengths.max()) + 1
    targets = np.full((n, width), VOCAB.eos_id, dtype=np.int64)
    for i, lb in enumerate(labels):
        ids = VOCAB.encode(lb)
        targets[i, : len(ids)] = ids
    return targets, lengths


def export_attention_strip(trace, path, cell=8):
    """Write the per-step attention rows as a PGM strip, one row block per
    emitted character, each row normalized to its own maximum."""
    tr = np.asarray(trace, dtype=np.float64)
    if tr.ndim != 2 or tr.shape[0] == 0:
        tr = np.zeros((1, max(tr.shape[-1] if tr.ndim == 2 else 1, 1)))
    peaks = np.maximum(tr.max(axis=1, keepdims=True), 1e-9)
    img = np.kron(tr / peaks, np.ones((cell, cell)))
    write_pgm(path, img)
    return path
