"""Kernel backend selection.

The compiled Cython kernels are used when the extension built; otherwise
the pure-numpy fallback is. Set ADVLAB_PURE_PYTHON=1 to force the
fallback (used by the benchmark and backend-parity tests).
"""

import os

from . import pure

if os.environ.get("ADVLAB_PURE_PYTHON"):
    _impl = pure
    BACKEND = "pure"
else:
    try:
        from . import _fast as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = pure
        BACKEND = "pure"

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
maxpool2_forward = _impl.maxpool2_forward
maxpool2_backward = _impl.maxpool2_backward

__all__ = [
    "BACKEND",
    "conv2d_forward",
    "conv2d_backward",
    "maxpool2_forward",
    "maxpool2_backward",
    "pure",
]
