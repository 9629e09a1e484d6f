"""Dense tensors with a gradient tape.

A :class:`Tensor` wraps a numpy array (float32 for training, float64 for
gradient checking). Operations executed while a :class:`Tape` is active
append one record each; :func:`backward` replays the records in reverse
execution order (a valid topological order by construction, so each
operation's adjoint runs exactly once) and accumulates gradients into
``Tensor.grad`` -- adjoints always add, never overwrite.

Every operation validates that its output is finite; a NaN/Inf raises
:class:`NonFiniteError` at the op that produced it.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np


class TensorError(Exception):
    """Shape or usage error in a tensor operation."""


class NonFiniteError(TensorError):
    """An operation produced NaN or Inf."""


class Tensor:
    """N-dimensional float array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None,
                 name: str = ""):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise TensorError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g: np.ndarray):
        if g.shape != self.data.shape:
            raise TensorError(
                f"gradient shape {g.shape} != tensor shape {self.data.shape}"
            )
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, dtype={self.dtype.name}, " \
               f"requires_grad={self.requires_grad})"


class TapeRecord:
    """One executed operation: its inputs, output, and adjoint."""

    __slots__ = ("op", "inputs", "output", "adjoint")

    def __init__(self, op: str, inputs: Sequence[Tensor], output: Tensor,
                 adjoint: Callable[[np.ndarray], None]):
        self.op = op
        self.inputs = tuple(inputs)
        self.output = output
        self.adjoint = adjoint


class Tape:
    """Ordered record of executed operations, used as a context manager."""

    def __init__(self):
        self.records: list[TapeRecord] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.pop()
        return False

    def record(self, op, inputs, output, adjoint):
        self.records.append(TapeRecord(op, inputs, output, adjoint))

    def __len__(self):
        return len(self.records)


_ACTIVE: list[Tape] = []


def active_tape() -> Optional[Tape]:
    return _ACTIVE[-1] if _ACTIVE else None


def check_finite(arr: np.ndarray, op: str):
    # A full-array sum is one streaming pass; NaN/Inf both propagate into it.
    if not np.isfinite(arr.sum()):
        raise NonFiniteError(f"{op} produced non-finite values")


def emit(op: str, inputs: Sequence[Tensor], out_data: np.ndarray,
         adjoint: Callable[[np.ndarray], None]) -> Tensor:
    """Wrap a forward result, validating it and recording on the active tape."""
    check_finite(out_data, op)
    requires = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=requires)
    tape = active_tape()
    if requires and tape is not None:
        tape.record(op, inputs, out, adjoint)
    return out


def backward(loss: Tensor, tape: Tape):
    """Populate gradients of ``loss`` w.r.t. every tensor on the tape.

    ``loss`` must be scalar and must have been produced under ``tape``:
    the records are replayed in reverse execution order, each exactly once.
    """
    if loss.data.size != 1:
        raise TensorError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.requires_grad and not any(r.output is loss for r in tape.records):
        raise TensorError("loss was not produced under this tape "
                          "(missing ancestry)")
    loss.accumulate_grad(np.ones_like(loss.data))
    for rec in reversed(tape.records):
        g = rec.output.grad
        if g is None:
            continue  # not on the path from loss
        rec.adjoint(g)
