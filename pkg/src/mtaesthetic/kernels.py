"""Kernel backend selection.

The compiled Cython module is used when it was built; otherwise, or when the
environment variable ``MTAESTHETIC_PURE_PYTHON=1`` is set at import time, the
numpy implementations are used. ``BACKEND`` names the active choice.
"""
import os

from . import _pykernels

pure = _pykernels

try:
    if os.environ.get("MTAESTHETIC_PURE_PYTHON") == "1":
        raise ImportError("pure-python kernels forced by environment")
    from . import _ckernels as compiled
except ImportError:
    compiled = None

_active = compiled if compiled is not None else pure
HAVE_COMPILED = compiled is not None
BACKEND = "cython" if HAVE_COMPILED else "numpy"

im2col = _active.im2col
col2im = _active.col2im
maxpool_forward = _active.maxpool_forward
maxpool_backward = _active.maxpool_backward
jacobi_eigh = _active.jacobi_eigh


def use(backend):
    """Switch the module-level kernels to ``"cython"`` or ``"numpy"``."""
    global _active, BACKEND, im2col, col2im, maxpool_forward, maxpool_backward, jacobi_eigh
    if backend == "cython":
        if compiled is None:
            raise RuntimeError("compiled kernels are not available")
        _active = compiled
    elif backend == "numpy":
        _active = pure
    else:
        raise ValueError(f"unknown kernel backend {backend!r}")
    BACKEND = backend
    im2col = _active.im2col
    col2im = _active.col2im
    maxpool_forward = _active.maxpool_forward
    maxpool_backward = _active.maxpool_backward
    jacobi_eigh = _active.jacobi_eigh
