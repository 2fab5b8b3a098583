"""Hot numeric kernels with a compiled core and a numpy fallback.

The compiled Cython extension (``avfuse.kernels._core``) is preferred
when importable; otherwise the numpy implementation in ``_fallback`` is
used.  Both expose the same four functions with identical semantics:

    conv2d_forward(x, w, b)        -> y
    conv2d_backward(x, w, gy)      -> (gx, gw, gb)
    avgpool2_forward(x)            -> y
    avgpool2_backward(x_shape, gy) -> gx

Set ``AVFUSE_BACKEND=python`` or ``AVFUSE_BACKEND=cython`` to force a
backend; forcing ``cython`` raises ImportError if the extension is not
built.  ``BACKEND`` names the implementation selected at import.
"""

import os

from . import _fallback

_choice = os.environ.get("AVFUSE_BACKEND", "").strip().lower()
if _choice not in ("", "python", "cython"):
    raise ImportError(
        f"AVFUSE_BACKEND={_choice!r} is not recognized (use 'python' or 'cython')"
    )

if _choice == "python":
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        if _choice == "cython":
            raise
        _impl = _fallback
        BACKEND = "python"

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
avgpool2_forward = _impl.avgpool2_forward
avgpool2_backward = _impl.avgpool2_backward

__all__ = [
    "BACKEND",
    "conv2d_forward",
    "conv2d_backward",
    "avgpool2_forward",
    "avgpool2_backward",
]
