"""Shared building blocks for the two sub-networks.

A Net owns an ordered dict of named parameter tensors plus batchnorm
running-stat buffers; creation order fixes the seeded init stream, so a
given (config, seed) always produces the same weights.
"""

from __future__ import annotations

import math

import numpy as np

from .autodiff.engine import Tensor
from .autodiff.rng import Rng
from .autodiff import ops


class Net:
    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self.bn_states: dict[str, ops.BnState] = {}
        self.training = True

    # -- parameter creation -------------------------------------------------

    def _add(self, name, arr):
        if name in self.params:
            raise ValueError(f"duplicate parameter {name}")
        t = Tensor(np.ascontiguousarray(arr, dtype=self.dtype), requires_grad=True)
        self.params[name] = t
        return t

    def add_uniform(self, name, shape, fan_in, rng: Rng):
        lim = math.sqrt(1.0 / fan_in)
        return self._add(name, rng.uniform_array(shape, -lim, lim))

    def add_zeros(self, name, shape):
        return self._add(name, np.zeros(shape))

    def add_ones(self, name, shape):
        return self._add(name, np.ones(shape))

    def add_conv(self, name, cin, cout, k, rng, bias=True, bn=False):
        self.add_uniform(f"{name}.w", (cout, cin, k, k), cin * k * k, rng)
        if bias:
            self.add_zeros(f"{name}.b", (cout,))
        if bn:
            self.add_ones(f"{name}.gamma", (cout,))
            self.add_zeros(f"{name}.beta", (cout,))
            self.bn_states[name] = ops.BnState.create(cout, dtype=self.dtype)

    def add_linear(self, name, din, dout, rng, bias=True):
        self.add_uniform(f"{name}.w", (dout, din), din, rng)
        if bias:
            self.add_zeros(f"{name}.b", (dout,))

    def add_lstm_dir(self, name, din, hidden, rng):
        self.add_uniform(f"{name}.w", (4 * hidden, din), din, rng)
        self.add_uniform(f"{name}.r", (4 * hidden, hidden), hidden, rng)
        self.add_zeros(f"{name}.b", (4 * hidden,))

    def add_gru(self, name, din, hidden, rng):
        self.add_uniform(f"{name}.w", (3 * hidden, din), din, rng)
        self.add_uniform(f"{name}.r", (3 * hidden, hidden), hidden, rng)
        self.add_zeros(f"{name}.b", (3 * hidden,))

    # -- application helpers ------------------------------------------------

    def conv_bn_relu(self, name, x, stride=1, padding=1):
        y = ops.conv2d(x, self.params[f"{name}.w"], self.params[f"{name}.b"], stride, padding)
        return ops.bn_relu(y, self.params[f"{name}.gamma"], self.params[f"{name}.beta"],
                           self.bn_states[name], "train" if self.training else "eval")

    def lstm_dir_params(self, name):
        return ops.LstmDirParams(self.params[f"{name}.w"], self.params[f"{name}.r"],
                                 self.params[f"{name}.b"])

    def gru_params(self, name):
        return ops.GruParams(self.params[f"{name}.w"], self.params[f"{name}.r"],
                             self.params[f"{name}.b"])

    # -- bookkeeping ---------------------------------------------------------

    def named_params(self):
        return list(self.params.items())

    def named_buffers(self):
        out = []
        for name, st in self.bn_states.items():
            out.append((f"{name}.running_mean", st.mean))
            out.append((f"{name}.running_var", st.var))
        return out

    def set_frozen(self, frozen: bool):
        for t in self.params.values():
            t.requires_grad = not frozen
            if not frozen and t.grad is None:
                t.grad = np.zeros_like(t.data)

    def zero_grads(self):
        for t in self.params.values():
            t.zero_grad()

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        """Overwrite parameters and buffers from name -> array (shape-checked)."""
        targets = dict(self.named_params())
        buffers = dict(self.named_buffers())
        for name, arr in arrays.items():
            if name in targets:
                t = targets[name]
                if tuple(arr.shape) != tuple(t.shape):
                    raise ValueError(f"{name}: checkpoint shape {arr.shape} != model {t.shape}")
                t.data[...] = arr.astype(self.dtype)
            elif name in buffers:
                buffers[name][...] = arr.astype(buffers[name].dtype)
            else:
                raise ValueError(f"unknown parameter {name!r} for this architecture")

    def snapshot(self) -> dict[str, np.ndarray]:
        out = {name: t.data.copy() for name, t in self.named_params()}
        out.update({name: a.copy() for name, a in self.named_buffers()})
        return out
