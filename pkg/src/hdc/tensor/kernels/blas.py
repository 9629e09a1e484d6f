"""conv3d lowered to BLAS matrix multiplies, in pure numpy.

A direct im2col of a 3x3x3 conv over few channels produces skinny GEMMs
(e.g. K=81, N=8 for the stem block) on which BLAS runs an order of
magnitude below peak. We instead group ``g`` consecutive output columns
along W into one matrix row: the receptive fields of ``g`` neighbouring
outputs overlap, so one row carries a contiguous window of
``(g-1)*sw + kw`` input columns, and the kernel matrix is zero-expanded to
``g*Cout`` output columns. That multiplies the GEMM's N by ``g`` (and K by
``span/kw``) at the price of multiplying by the padding zeros, turning the
stem block's 16 GF/s GEMM into a ~70 GF/s one.

This module is the pure-numpy fallback backend: im2col is one strided-view
copy, col2im one strided add per (kt, kh, span) offset. The numba backend
reuses the same plan and GEMMs but does the data movement in jit kernels.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import as_strided


class Plan(NamedTuple):
    out_shape: tuple    # (B, To, Ho, Wo, Co)
    g: int              # output columns grouped per GEMM row
    span: int           # input columns covered by one group window
    mg: int             # GEMM rows
    kg: int             # GEMM depth
    ng: int             # GEMM columns (g * Co)


def out_extent(n: int, k: int, s: int) -> int:
    return (n - k) // s + 1


def make_plan(xpad_shape, kernel_shape, strides) -> Plan:
    b, tp, hp, wp, ci = xpad_shape
    kt, kh, kw, _, co = kernel_shape
    st, sh, sw = strides
    to = out_extent(tp, kt, st)
    ho = out_extent(hp, kh, sh)
    wo = out_extent(wp, kw, sw)
    if min(to, ho, wo) < 1:
        raise ValueError(
            f"kernel {kernel_shape[:3]} with strides {strides} does not fit "
            f"padded input extents {xpad_shape[1:4]}")
    g = 1
    if co < 32:
        for cand in range(2, wo + 1):
            if wo % cand == 0 and cand * co >= 32:
                g = cand
                break
        else:
            g = wo  # no divisor reaches the target; take the whole row
    span = (g - 1) * sw + kw
    return Plan(
        out_shape=(b, to, ho, wo, co),
        g=g,
        span=span,
        mg=b * to * ho * (wo // g),
        kg=kt * kh * span * ci,
        ng=g * co,
    )


def window_view(xpad: np.ndarray, plan: Plan, kernel_shape, strides):
    """Read-only sliding-window view [B,To,Ho,Wg,kt,kh,span,Ci]."""
    b, to, ho, wo, _ = plan.out_shape
    kt, kh, kw, ci, _ = kernel_shape
    st, sh, sw = strides
    s0, s1, s2, s3, s4 = xpad.strides
    return as_strided(
        xpad,
        shape=(b, to, ho, wo // plan.g, kt, kh, plan.span, ci),
        strides=(s0, st * s1, sh * s2, plan.g * sw * s3, s1, s2, s3, s4),
        writeable=False,
    )


def im2col(xpad: np.ndarray, plan: Plan, kernel_shape, strides) -> np.ndarray:
    view = window_view(xpad, plan, kernel_shape, strides)
    return view.reshape(plan.mg, plan.kg)  # copies into a contiguous buffer


def expand_kernel(kernel: np.ndarray, plan: Plan, strides) -> np.ndarray:
    kt, kh, kw, ci, co = kernel.shape
    sw = strides[2]
    kexp = np.zeros((kt, kh, plan.span, ci, plan.g, co), dtype=kernel.dtype)
    for wl in range(plan.g):
        for dw in range(kw):
            kexp[:, :, wl * sw + dw, :, wl, :] = kernel[:, :, dw, :, :]
    return kexp.reshape(plan.kg, plan.ng)


def fold_kernel_grad(gk_exp: np.ndarray, plan: Plan, kernel_shape,
                     strides) -> np.ndarray:
    """Adjoint of expand_kernel: collapse the grouped columns back."""
    kt, kh, kw, ci, co = kernel_shape
    sw = strides[2]
    gk_exp = gk_exp.reshape(kt, kh, plan.span, ci, plan.g, co)
    gk = np.zeros(kernel_shape, dtype=gk_exp.dtype)
    for wl in range(plan.g):
        for dw in range(kw):
            gk[:, :, dw, :, :] += gk_exp[:, :, wl * sw + dw, :, wl, :]
    return gk


def col2im(gcols: np.ndarray, plan: Plan, kernel_shape, strides,
           xpad_shape) -> np.ndarray:
    """Adjoint of im2col: strided scatter-add of the column gradient."""
    b, to, ho, wo, _ = plan.out_shape
    kt, kh, kw, ci, _ = kernel_shape
    st, sh, sw = strides
    gview = gcols.reshape(b, to, ho, wo // plan.g, kt, kh, plan.span, ci)
    gxpad = np.zeros(xpad_shape, dtype=gcols.dtype)
    wg = wo // plan.g
    step = plan.g * sw
    for dt in range(kt):
        for dh in range(kh):
            for j in range(plan.span):
                gxpad[:, dt:dt + to * st:st, dh:dh + ho * sh:sh,
                      j:j + wg * step:step, :] += gview[:, :, :, :, dt, dh, j, :]
    return gxpad


def instance_norm_forward(xflat, gamma, beta, eps):
    """Per (instance, channel) normalization of [B, N, C].

    Returns (y, xhat, inv) with xhat the normalized input and inv the
    per-(b, c) reciprocal standard deviation."""
    mean = xflat.mean(axis=1)
    var = np.square(xflat).mean(axis=1) - np.square(mean)
    np.maximum(var, 0.0, out=var)  # guard fp cancellation
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=xflat.dtype))
    xhat = (xflat - mean[:, None, :]) * inv[:, None, :]
    y = gamma * xhat + beta
    return y, xhat, inv


def instance_norm_backward(g, xhat, inv, gamma):
    """Adjoint of instance_norm_forward.

    Returns (gx, ggamma, gbeta); the affine-parameter gradients are summed
    over instances."""
    gh = g * gamma
    m1 = gh.mean(axis=1)
    m2 = (gh * xhat).mean(axis=1)
    gx = inv[:, None, :] * (gh - m1[:, None, :] - xhat * m2[:, None, :])
    c = g.shape[2]
    ggamma = (g * xhat).reshape(-1, c).sum(axis=0)
    gbeta = g.reshape(-1, c).sum(axis=0)
    return gx, ggamma, gbeta


def conv3d_forward(xpad, kernel, bias, strides):
    """Valid conv of a padded input. Returns (output, ctx for backward)."""
    plan = make_plan(xpad.shape, kernel.shape, strides)
    cols = im2col(xpad, plan, kernel.shape, strides)
    y = cols @ expand_kernel(kernel, plan, strides)
    y = y.reshape(plan.out_shape)
    y += bias
    return y, (plan, cols)


def conv3d_grad_kernel(ctx, xpad, gy, kernel_shape, strides):
    """Gradient w.r.t. the kernel; reuses the forward's im2col when given."""
    if ctx is None:
        plan = make_plan(xpad.shape, kernel_shape, strides)
        cols = im2col(xpad, plan, kernel_shape, strides)
    else:
        plan, cols = ctx
    gk_exp = cols.T @ gy.reshape(plan.mg, plan.ng)
    return fold_kernel_grad(gk_exp, plan, kernel_shape, strides)


def conv3d_grad_input(ctx, gy, kernel, strides, xpad_shape):
    """Gradient w.r.t. the (padded) input."""
    plan = (ctx[0] if ctx is not None
            else make_plan(xpad_shape, kernel.shape, strides))
    gcols = gy.reshape(plan.mg, plan.ng) @ expand_kernel(
        kernel, plan, strides).T
    return col2im(gcols, plan, kernel.shape, strides, xpad_shape)
