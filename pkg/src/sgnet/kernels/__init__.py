"""Hot-kernel backend selection.

The compiled Cython module is preferred when importable; the numpy
fallback is bit-compatible. ``SGNET_KERNELS=pure`` forces the fallback,
``SGNET_KERNELS=compiled`` fails loudly if the extension is missing.
"""

import os

from . import pure

_requested = os.environ.get("SGNET_KERNELS", "").strip().lower()

if _requested not in ("", "pure", "compiled"):
    raise ImportError(f"SGNET_KERNELS must be 'pure' or 'compiled', got {_requested!r}")

if _requested == "pure":
    _impl = pure
    BACKEND = "pure"
else:
    try:
        from . import _fast as _impl

        BACKEND = "compiled"
    except ImportError:
        if _requested == "compiled":
            raise
        _impl = pure
        BACKEND = "pure"

conv_out_size = pure.conv_out_size
im2col = _impl.im2col
col2im = _impl.col2im
maxpool2x2_forward = _impl.maxpool2x2_forward
maxpool2x2_backward = _impl.maxpool2x2_backward
