"""Differentiable operations on :class:`Tensor`.

Array layout is row-major ``[B, T, H, W, C]`` (channels innermost).
Each op validates shapes, runs the numpy/kernel forward, and registers an
adjoint on the active tape. Adjoints only compute gradients for inputs with
``requires_grad`` -- in particular the conv input gradient is skipped
entirely when the input is raw data.
"""

from __future__ import annotations

from typing import Sequence, Union

import numpy as np

from . import kernels
from .core import Tensor, TensorError, emit


def _same_padding(extent: int, k: int, s: int) -> tuple[int, int]:
    # ceil(extent/s) outputs; odd total padding puts the extra pixel trailing
    out = -(-extent // s)
    total = max((out - 1) * s + k - extent, 0)
    lead = total // 2
    return lead, total - lead


def conv3d(x: Tensor, kernel: Tensor, bias: Tensor,
           stride: tuple[int, int, int] = (1, 1, 1),
           padding: str = "same") -> Tensor:
    """3D convolution of [B,T,H,W,Cin] with [kt,kh,kw,Cin,Cout] + bias."""
    if x.data.ndim != 5 or kernel.data.ndim != 5:
        raise TensorError("conv3d expects a 5-d input and a 5-d kernel")
    kt, kh, kw, cin, cout = kernel.shape
    if x.shape[4] != cin:
        raise TensorError(
            f"input channels {x.shape[4]} != kernel channels {cin}")
    if bias.shape != (cout,):
        raise TensorError(f"bias shape {bias.shape} != ({cout},)")
    if any(s < 1 for s in stride):
        raise TensorError(f"strides must be >= 1, got {stride}")
    if padding == "same":
        pads = [(0, 0)] + [
            _same_padding(x.shape[1 + i], (kt, kh, kw)[i], stride[i])
            for i in range(3)
        ] + [(0, 0)]
        xpad = np.zeros([e + p[0] + p[1] for e, p in zip(x.shape, pads)],
                        dtype=x.dtype)
        xpad[:, pads[1][0]:pads[1][0] + x.shape[1],
             pads[2][0]:pads[2][0] + x.shape[2],
             pads[3][0]:pads[3][0] + x.shape[3], :] = x.data
    elif padding == "valid":
        pads = [(0, 0)] * 5
        xpad = x.data
    else:
        raise TensorError(f"unknown padding {padding!r}")
    if any(k > e for k, e in zip((kt, kh, kw), xpad.shape[1:4])):
        raise TensorError(
            f"kernel {kernel.shape[:3]} larger than padded input "
            f"{xpad.shape[1:4]}")

    out, ctx = kernels.conv3d_forward(xpad, kernel.data, bias.data, stride)

    def adjoint(g):
        if kernel.requires_grad:
            kernel.accumulate_grad(
                kernels.conv3d_grad_kernel(ctx, xpad, g, kernel.shape, stride))
        if bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=(0, 1, 2, 3)))
        if x.requires_grad:
            gxpad = kernels.conv3d_grad_input(ctx, g, kernel.data, stride,
                                              xpad.shape)
            sl = tuple(slice(p[0], p[0] + e) for p, e in
                       zip(pads, x.shape))
            x.accumulate_grad(gxpad[sl])

    return emit("conv3d", (x, kernel, bias), out, adjoint)


def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor,
                  eps: float = 1e-5) -> Tensor:
    """Normalize each (instance, channel) over its T,H,W extent."""
    if x.data.ndim != 5:
        raise TensorError("instance_norm expects [B,T,H,W,C]")
    n = x.shape[1] * x.shape[2] * x.shape[3]
    if n < 2 and eps <= 0:
        raise TensorError("instance_norm needs T*H*W >= 2 or eps > 0")
    if eps <= 0:
        raise TensorError("eps must be > 0")
    b, t, h, w, c = x.shape
    out, xhat, inv = kernels.instance_norm_forward(
        x.data.reshape(b, n, c), gamma.data, beta.data, eps)
    out = out.reshape(x.shape)

    def adjoint(g):
        gx, ggamma, gbeta = kernels.instance_norm_backward(
            g.reshape(b, n, c), xhat, inv, gamma.data)
        if beta.requires_grad:
            beta.accumulate_grad(gbeta)
        if gamma.requires_grad:
            gamma.accumulate_grad(ggamma)
        if x.requires_grad:
            x.accumulate_grad(gx.reshape(x.shape))

    return emit("instance_norm", (x, gamma, beta), out, adjoint)


def relu(x: Tensor) -> Tensor:
    """Elementwise max(x, 0); subgradient at 0 is 0."""
    mask = x.data > 0

    def adjoint(g):
        if x.requires_grad:
            x.accumulate_grad(g * mask)

    return emit("relu", (x,), np.maximum(x.data, 0), adjoint)


def pool_spatial(x: Tensor) -> Tensor:
    """Average over H,W per temporal index: [B,T,H,W,C] -> [B,T,C]."""
    _, _, h, w, _ = x.shape

    def adjoint(g):
        if x.requires_grad:
            x.accumulate_grad(
                np.broadcast_to(g[:, :, None, None, :] / (h * w), x.shape).copy())

    return emit("pool_spatial", (x,), x.data.mean(axis=(2, 3)), adjoint)


def pool_global(x: Tensor) -> Tensor:
    """Average over T,H,W: [B,T,H,W,C] -> [B,C]."""
    _, t, h, w, _ = x.shape

    def adjoint(g):
        if x.requires_grad:
            x.accumulate_grad(
                np.broadcast_to(g[:, None, None, None, :] / (t * h * w),
                                x.shape).copy())

    return emit("pool_global", (x,), x.data.mean(axis=(1, 2, 3)), adjoint)


def time_slice(x: Tensor, n: int) -> Tensor:
    """Select temporal index n of [B,T,C] -> [B,C]."""

    def adjoint(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gx[:, n, :] = g
            x.accumulate_grad(gx)

    return emit("time_slice", (x,), x.data[:, n, :].copy(), adjoint)


def pool(x: Tensor, mode: str) -> Union[list[Tensor], Tensor]:
    """``spatial``: sequence of T vectors [B,C]; ``global``: one [B,C]."""
    if mode == "spatial":
        per_t = pool_spatial(x)
        return [time_slice(per_t, n) for n in range(x.shape[1])]
    if mode == "global":
        return pool_global(x)
    raise TensorError(f"unknown pool mode {mode!r}")


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map: [B,Din] @ [Din,Dout] + [Dout]."""
    if x.shape[1] != weight.shape[0]:
        raise TensorError(
            f"linear inner extents disagree: {x.shape} vs {weight.shape}")
    if bias.shape != (weight.shape[1],):
        raise TensorError(f"bias shape {bias.shape} != ({weight.shape[1]},)")

    def adjoint(g):
        if x.requires_grad:
            x.accumulate_grad(g @ weight.data.T)
        if weight.requires_grad:
            weight.accumulate_grad(x.data.T @ g)
        if bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=0))

    return emit("linear", (x, weight, bias),
                x.data @ weight.data + bias.data, adjoint)


def cosine_similarity_matrix(a: Tensor, c: Tensor) -> Tensor:
    """out[i][j] = (a_i . c_j) / (|a_i| |c_j|). Zero-norm rows are an error."""
    if a.data.ndim != 2 or c.data.ndim != 2 or a.shape[1] != c.shape[1]:
        raise TensorError(
            f"cosine similarity needs [B,D] x [B',D], got {a.shape}, {c.shape}")
    na = np.linalg.norm(a.data, axis=1)
    nc = np.linalg.norm(c.data, axis=1)
    if np.any(na == 0.0) or np.any(nc == 0.0):
        raise TensorError("cosine similarity of a zero-norm row")
    an = a.data / na[:, None]
    cn = c.data / nc[:, None]
    sim = an @ cn.T

    def adjoint(g):
        if a.requires_grad:
            a.accumulate_grad(
                (g @ cn - (g * sim).sum(axis=1, keepdims=True) * an)
                / na[:, None])
        if c.requires_grad:
            c.accumulate_grad(
                (g.T @ an - (g * sim).sum(axis=0)[:, None] * cn)
                / nc[:, None])

    return emit("cosine_similarity_matrix", (a, c), sim, adjoint)


def cross_entropy_logits(logits: Tensor, labels: np.ndarray,
                         reduction: str = "sum") -> Tensor:
    """Softmax cross-entropy against integer labels, row-max stabilized."""
    if logits.data.ndim != 2:
        raise TensorError("cross_entropy_logits expects [B,K]")
    b = logits.shape[0]
    labels = np.asarray(labels)
    if labels.shape != (b,):
        raise TensorError(f"labels shape {labels.shape} != ({b},)")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(b)
    losses = lse - z[rows, labels]
    if reduction == "sum":
        out = losses.sum()
        factor = 1.0
    elif reduction == "mean":
        out = losses.mean()
        factor = 1.0 / b
    else:
        raise TensorError(f"unknown reduction {reduction!r}")

    def adjoint(g):
        if logits.requires_grad:
            p = np.exp(z - lse[:, None])
            p[rows, labels] -= 1.0
            logits.accumulate_grad(g * factor * p)

    return emit("cross_entropy_logits", (logits,),
                np.asarray(out, dtype=logits.dtype), adjoint)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise TensorError(f"add shape mismatch: {a.shape} vs {b.shape}")

    def adjoint(g):
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g)

    return emit("add", (a, b), a.data + b.data, adjoint)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise TensorError(f"mul shape mismatch: {a.shape} vs {b.shape}")

    def adjoint(g):
        if a.requires_grad:
            a.accumulate_grad(g * b.data)
        if b.requires_grad:
            b.accumulate_grad(g * a.data)

    return emit("mul", (a, b), a.data * b.data, adjoint)


def scale(x: Tensor, factor: float) -> Tensor:
    f = float(factor)

    def adjoint(g):
        if x.requires_grad:
            x.accumulate_grad(g * np.asarray(f, dtype=x.dtype))

    return emit("scale", (x,), x.data * np.asarray(f, dtype=x.dtype), adjoint)


def tensor_sum(x: Tensor) -> Tensor:
    def adjoint(g):
        if x.requires_grad:
            x.accumulate_grad(np.broadcast_to(g, x.shape).copy())

    return emit("sum", (x,), np.asarray(x.data.sum(), dtype=x.dtype), adjoint)


def batch_slice(x: Tensor, start: int, stop: int) -> Tensor:
    """Select rows [start:stop) along the batch axis."""

    def adjoint(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gx[start:stop] = g
            x.accumulate_grad(gx)

    return emit("batch_slice", (x,), x.data[start:stop].copy(), adjoint)
