"""Kernel selection: compiled extension when importable, numpy otherwise.

Set ``SHARECAUSE_PURE_PYTHON=1`` to force the numpy kernels.
"""

import os

from . import _fallback

try:
    if os.environ.get("SHARECAUSE_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python kernels requested")
    from . import _kernels as kernels
    COMPILED = True
except ImportError:
    kernels = _fallback
    COMPILED = False

fallback = _fallback

__all__ = ["kernels", "fallback", "COMPILED"]
