"""Hot-loop backend selection.

The compiled extension is used when it imports; otherwise, or when
``DEEPFRAME_KERNELS=python`` is set, the pure-Python twins are used.
"""

import os

from . import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("DEEPFRAME_KERNELS", "").lower() != "python":
    try:
        from . import _kernels as _impl  # noqa: F811

        BACKEND = "compiled"
    except ImportError:
        _impl = _fallback

im2col = _impl.im2col
col2im = _impl.col2im
local_conv_forward = _impl.local_conv_forward
local_conv_backward = _impl.local_conv_backward
sad_surface = _impl.sad_surface
ArithmeticEncoder = _impl.ArithmeticEncoder
ArithmeticDecoder = _impl.ArithmeticDecoder

__all__ = [
    "BACKEND",
    "im2col",
    "col2im",
    "local_conv_forward",
    "local_conv_backward",
    "sad_surface",
    "ArithmeticEncoder",
    "ArithmeticDecoder",
]
