"""Accelerated conv3d backend: numba @njit data movement + BLAS GEMMs.

The matrix multiplies stay in BLAS (nothing hand-rolled beats a tuned GEMM
there); numba takes over the memory-bound gather/scatter between the
array layout and the GEMM layout, where the pure-numpy strided operations
leave several-fold on the table -- most of all the col2im scatter-add in
the input-gradient pass.

prange chunks own disjoint output slices and accumulate sequentially
inside, so results are bit-deterministic for any thread count.
"""

import os

import numba
import numpy as np
from numba import njit, prange

from . import blas

_threads = os.environ.get("HDC_THREADS")
if _threads:
    numba.set_num_threads(max(1, min(int(_threads),
                                     numba.config.NUMBA_NUM_THREADS)))


@njit(parallel=True, fastmath=True, cache=True)
def _im2col(xflat, cols, m0, nrows, to, ho, wg, kt, kh, span_ci, st, sh,
            wstep_ci):
    # xflat: [B, Tp, Hp, Wp*Ci]; fills cols[0:nrows] for GEMM rows starting
    # at m0; one contiguous copy per (row, dt, dh)
    for r in prange(nrows):
        m = m0 + r
        w = m % wg
        rest = m // wg
        h = rest % ho
        rest //= ho
        t = rest % to
        b = rest // to
        row = cols[r]
        w0 = w * wstep_ci
        q = 0
        for dt in range(kt):
            ti = t * st + dt
            for dh in range(kh):
                src = xflat[b, ti, h * sh + dh]
                row[q:q + span_ci] = src[w0:w0 + span_ci]
                q += span_ci


@njit(parallel=True, fastmath=True, cache=True)
def _col2im(gcols, gxflat, to, ho, wg, kt, kh, span_ci, st, sh, wstep_ci):
    # gxflat: [B, Tp, Hp, Wp*Ci]; one contiguous add per (row, dt, dh)
    bsz = gxflat.shape[0]
    for b in prange(bsz):
        for t in range(to):
            for h in range(ho):
                m = ((b * to + t) * ho + h) * wg
                for w in range(wg):
                    row = gcols[m + w]
                    w0 = w * wstep_ci
                    q = 0
                    for dt in range(kt):
                        ti = t * st + dt
                        for dh in range(kh):
                            dst = gxflat[b, ti, h * sh + dh]
                            dst[w0:w0 + span_ci] += row[q:q + span_ci]
                            q += span_ci


@njit(parallel=True, fastmath=True, cache=True)
def _in_fwd(x, gamma, beta, eps, y, xhat, inv):
    bsz, n, c = x.shape
    for b in prange(bsz):
        mu = np.zeros(c, dtype=x.dtype)
        m2 = np.zeros(c, dtype=x.dtype)
        for i in range(n):
            row = x[b, i]
            for j in range(c):
                v = row[j]
                mu[j] += v
                m2[j] += v * v
        for j in range(c):
            m = mu[j] / n
            var = m2[j] / n - m * m
            if var < 0.0:
                var = 0.0
            mu[j] = m
            inv[b, j] = 1.0 / np.sqrt(var + eps)
        for i in range(n):
            xr = x[b, i]
            hr = xhat[b, i]
            yr = y[b, i]
            for j in range(c):
                h = (xr[j] - mu[j]) * inv[b, j]
                hr[j] = h
                yr[j] = gamma[j] * h + beta[j]


@njit(parallel=True, fastmath=True, cache=True)
def _in_bwd(g, xhat, inv, gamma, gx, gg_part, gb_part):
    bsz, n, c = g.shape
    for b in prange(bsz):
        s1 = np.zeros(c, dtype=g.dtype)
        s2 = np.zeros(c, dtype=g.dtype)
        gg = gg_part[b]
        gb = gb_part[b]
        for i in range(n):
            gr = g[b, i]
            hr = xhat[b, i]
            for j in range(c):
                gh = gr[j] * gamma[j]
                s1[j] += gh
                s2[j] += gh * hr[j]
                gg[j] += gr[j] * hr[j]
                gb[j] += gr[j]
        for j in range(c):
            s1[j] /= n
            s2[j] /= n
        for i in range(n):
            gr = g[b, i]
            hr = xhat[b, i]
            xr = gx[b, i]
            for j in range(c):
                xr[j] = inv[b, j] * (gr[j] * gamma[j] - s1[j]
                                     - hr[j] * s2[j])


def instance_norm_forward(xflat, gamma, beta, eps):
    xflat = np.ascontiguousarray(xflat)
    y = np.empty_like(xflat)
    xhat = np.empty_like(xflat)
    inv = np.empty((xflat.shape[0], xflat.shape[2]), dtype=xflat.dtype)
    _in_fwd(xflat, gamma, beta, xflat.dtype.type(eps), y, xhat, inv)
    return y, xhat, inv


def instance_norm_backward(g, xhat, inv, gamma):
    g = np.ascontiguousarray(g)
    gx = np.empty_like(g)
    bsz, _, c = g.shape
    gg_part = np.zeros((bsz, c), dtype=g.dtype)
    gb_part = np.zeros((bsz, c), dtype=g.dtype)
    _in_bwd(g, xhat, inv, gamma, gx, gg_part, gb_part)
    return gx, gg_part.sum(axis=0), gb_part.sum(axis=0)


def _movement_args(plan: blas.Plan, xpad_shape, kernel_shape, strides):
    ci = xpad_shape[4]
    b, to, ho, wo, _ = plan.out_shape
    kt, kh, _, _, _ = kernel_shape
    st, sh, sw = strides
    return (to, ho, wo // plan.g, kt, kh, plan.span * ci, st, sh,
            plan.g * sw * ci)


def _flat_rows(xpad):
    b, tp, hp, wp, ci = xpad.shape
    return np.ascontiguousarray(xpad).reshape(b, tp, hp, wp * ci)


# GEMM rows are processed in chunks through a reused scratch buffer: a
# monolithic cols array for the widest block would be re-mmapped by the
# allocator on every step, and the page-fault churn costs more than the
# whole GEMM.
_CHUNK_BYTES = 8 << 20
_scratch: dict = {}


def _chunks(plan: blas.Plan, itemsize: int):
    rows = max(1, _CHUNK_BYTES // (plan.kg * itemsize))
    for m0 in range(0, plan.mg, rows):
        yield m0, min(rows, plan.mg - m0)


def _cols_chunk(xflat, plan, move_args, m0, nrows, dtype):
    key = (plan.kg, dtype)
    buf = _scratch.get(key)
    cap = max(1, _CHUNK_BYTES // (plan.kg * dtype.itemsize))
    if buf is None or buf.shape[0] < max(nrows, cap):
        buf = np.empty((max(nrows, cap), plan.kg), dtype=dtype)
        _scratch[key] = buf
    _im2col(xflat, buf, m0, nrows, *move_args)
    return buf[:nrows]


def conv3d_forward(xpad, kernel, bias, strides):
    plan = blas.make_plan(xpad.shape, kernel.shape, strides)
    move_args = _movement_args(plan, xpad.shape, kernel.shape, strides)
    xflat = _flat_rows(xpad)
    kexp = blas.expand_kernel(kernel, plan, strides)
    y = np.empty((plan.mg, plan.ng), dtype=xpad.dtype)
    for m0, nrows in _chunks(plan, xpad.dtype.itemsize):
        cols = _cols_chunk(xflat, plan, move_args, m0, nrows, xpad.dtype)
        np.matmul(cols, kexp, out=y[m0:m0 + nrows])
    y = y.reshape(plan.out_shape)
    y += bias
    return y, (plan, xflat)


def conv3d_grad_kernel(ctx, xpad, gy, kernel_shape, strides):
    if ctx is None:
        plan = blas.make_plan(xpad.shape, kernel_shape, strides)
        xflat = _flat_rows(xpad)
    else:
        plan, xflat = ctx
    move_args = _movement_args(plan, xpad.shape, kernel_shape, strides)
    gyg = gy.reshape(plan.mg, plan.ng)
    gk_exp = np.zeros((plan.kg, plan.ng), dtype=gy.dtype)
    for m0, nrows in _chunks(plan, gy.dtype.itemsize):
        cols = _cols_chunk(xflat, plan, move_args, m0, nrows, gy.dtype)
        gk_exp += cols.T @ gyg[m0:m0 + nrows]
    return blas.fold_kernel_grad(gk_exp, plan, kernel_shape, strides)


def conv3d_grad_input(ctx, gy, kernel, strides, xpad_shape):
    plan = (ctx[0] if ctx is not None
            else blas.make_plan(xpad_shape, kernel.shape, strides))
    to, ho, wg, kt, kh, span_ci, st, sh, wstep_ci = _movement_args(
        plan, xpad_shape, kernel.shape, strides)
    gcols = gy.reshape(plan.mg, plan.ng) @ blas.expand_kernel(
        kernel, plan, strides).T
    gxpad = np.zeros(xpad_shape, dtype=gy.dtype)
    _col2im(gcols, gxpad.reshape(xpad_shape[0], xpad_shape[1],
                                 xpad_shape[2], -1),
            to, ho, wg, kt, kh, span_ci, st, sh, wstep_ci)
    return gxpad
