"""Dense-tensor reverse-mode engine.

A Tensor wraps a numpy array plus an optional gradient buffer. Ops executed
while a Tape is active append (output, inputs, backward_fn) records; the
record order is execution order, which is already topological, so the
backward pass is a single reverse sweep. With no active tape ops just
compute values (inference mode).
"""

from __future__ import annotations

import itertools
import threading

import numpy as np

_ids = itertools.count(1)
_tls = threading.local()


def active_tape():
    return getattr(_tls, "tape", None)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.node = None  # (tape id, op index) while recorded on the active tape

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}, grad={'yes' if self.grad is not None else 'no'})"

    # arithmetic operators are provided by ops (registered below)


class Tape:
    """Ordered record of executed ops for one reverse sweep."""

    def __init__(self):
        self._ops: list = []
        self._id = next(_ids)

    def __enter__(self):
        if active_tape() is not None:
            raise RuntimeError("a tape is already active on this thread")
        _tls.tape = self
        return self

    def __exit__(self, *exc):
        _tls.tape = None
        return False

    def _tracked(self, t) -> bool:
        return isinstance(t, Tensor) and (
            t.requires_grad or (t.node is not None and t.node[0] == self._id)
        )

    def record(self, out: Tensor, backward_fn):
        out.node = (self._id, len(self._ops))
        self._ops.append((out, backward_fn))

    def backward(self, loss: Tensor):
        """Populate grad buffers of everything `loss` depends on."""
        if not isinstance(loss, Tensor) or loss.size != 1:
            raise ValueError("backward requires a scalar tensor")
        if loss.node is None or loss.node[0] != self._id:
            raise ValueError("loss was not computed on this tape")
        accum(loss, np.ones_like(loss.data))
        for out, fn in reversed(self._ops):
            if out.grad is not None:
                fn(out.grad)
        self._ops.clear()


def accum(t: Tensor, g: np.ndarray):
    """Add a gradient contribution; `g` must be safe for the tensor to own."""
    if t.grad is None:
        t.grad = g if isinstance(g, np.ndarray) and g.shape == t.data.shape else np.broadcast_to(g, t.data.shape).copy()
    else:
        t.grad += g


def record(out: Tensor, inputs, backward_fn) -> Tensor:
    """Attach `out` to the active tape when any input participates."""
    tape = active_tape()
    if tape is not None and any(tape._tracked(i) for i in inputs):
        tape.record(out, backward_fn)
    return out


def needs_grad(t) -> bool:
    """Whether a gradient for `t` is wanted (leaf flag or tape membership)."""
    if not isinstance(t, Tensor):
        return False
    if t.requires_grad:
        return True
    tape = active_tape()
    return tape is not None and t.node is not None and t.node[0] == tape._id


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))
