"""Hot-loop kernel dispatch.

The compiled ``_kernels`` extension is preferred; the numpy implementation in
``_kernels_py`` is used when the extension is not built or when the
environment variable ``ONN_PURE_PYTHON`` is set to a non-empty value other
than ``0``.
"""

import os

from . import _kernels_py

if os.environ.get("ONN_PURE_PYTHON", "0") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not compiled
        _impl = _kernels_py

BACKEND = "compiled" if _impl is not _kernels_py else "python"

im2col = _impl.im2col
col2im = _impl.col2im
maxpool2x2_forward = _impl.maxpool2x2_forward
maxpool2x2_backward = _impl.maxpool2x2_backward
dense_forward = _impl.dense_forward

__all__ = ["BACKEND", "im2col", "col2im", "maxpool2x2_forward", "maxpool2x2_backward", "dense_forward"]
