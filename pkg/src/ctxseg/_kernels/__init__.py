"""Hot-kernel backend selection.

Set CTXSEG_BACKEND=numpy to force the pure-numpy path; CTXSEG_BACKEND=numba
requires numba to be importable. Default is numba when available.
"""

import os

_requested = os.environ.get("CTXSEG_BACKEND", "").strip().lower()

if _requested not in ("", "numba", "numpy"):
    raise ValueError(f"CTXSEG_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

if _requested == "numpy":
    BACKEND = "numpy"
else:
    try:
        from . import numba_backend as _impl  # noqa: F401
        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        BACKEND = "numpy"

if BACKEND == "numba":
    from .numba_backend import (
        bilinear_backward,
        bilinear_forward,
        col2im,
        im2col,
    )
else:
    from .numpy_backend import (
        bilinear_backward,
        bilinear_forward,
        col2im,
        im2col,
    )

__all__ = ["BACKEND", "im2col", "col2im", "bilinear_forward", "bilinear_backward"]
