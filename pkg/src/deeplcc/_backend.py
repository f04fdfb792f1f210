"""Select the kernel implementation at import time.

Set ``DEEPLCC_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

from . import _kernels_py

if os.environ.get("DEEPLCC_PURE_PYTHON") == "1":
    kernels = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as kernels
        BACKEND = "cython"
    except ImportError:  # extension not built
        kernels = _kernels_py
        BACKEND = "python"

__all__ = ["kernels", "BACKEND"]
