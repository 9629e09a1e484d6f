"""Convolution kernel backends.

Two implementations of the same three hot kernels (conv3d forward, gradient
w.r.t. input, gradient w.r.t. kernel). Both lower the convolution to the
same grouped-column GEMM (see ``blas.py``); they differ in who moves the
data between the array layout and the GEMM layout:

* ``jit`` -- numba ``@njit`` gather/scatter kernels (default when numba
  imports); the memory-bound im2col/col2im passes run several times faster
  than their strided-numpy equivalents.
* ``blas`` -- pure numpy throughout; the fallback when numba is
  unavailable or explicitly disabled.

Selection: ``HDC_BACKEND`` = ``auto`` (default), ``numba``, or ``numpy``.
``benchmarks/bench_kernels.py`` compares the two on your hardware.
``HDC_THREADS`` caps numba's thread pool (BLAS threading follows the usual
``OPENBLAS_NUM_THREADS``-style variables read at process start).

Each backend is bit-deterministic from run to run for a fixed thread
count; the two are not bit-identical to each other (different accumulation
orders in col2im).
"""

import os

from . import blas

_BACKEND_ENV = "HDC_BACKEND"
_VALID = ("auto", "numpy", "numba")


def _resolve():
    choice = os.environ.get(_BACKEND_ENV, "auto").lower()
    if choice not in _VALID:
        raise ValueError(
            f"{_BACKEND_ENV} must be one of {_VALID}, got {choice!r}"
        )
    if choice == "numpy":
        return blas, "numpy"
    try:
        from . import jit
    except ImportError:
        if choice == "numba":
            raise
        return blas, "numpy"
    return jit, "numba"


_impl, _name = _resolve()

conv3d_forward = _impl.conv3d_forward
conv3d_grad_input = _impl.conv3d_grad_input
conv3d_grad_kernel = _impl.conv3d_grad_kernel
instance_norm_forward = _impl.instance_norm_forward
instance_norm_backward = _impl.instance_norm_backward


def backend_name() -> str:
    """Name of the active backend: ``numpy`` or ``numba``."""
    return _name
