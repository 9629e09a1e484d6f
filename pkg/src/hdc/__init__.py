"""Self-supervised video representation learning by decoupled
spatial/temporal contrast at multiple feature scales, on a small
numpy-based tensor engine."""

import os as _os
import sys as _sys

# The training step interleaves many small BLAS calls with numba kernels;
# multi-threaded OpenBLAS spin-waits after every call and starves the rest
# of the step. Single-threaded BLAS is faster end to end (the GEMMs here
# are small); export OPENBLAS_NUM_THREADS yourself to override. Only
# effective if numpy has not been imported yet.
if "numpy" not in _sys.modules:
    _os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

__version__ = "0.1.0"
