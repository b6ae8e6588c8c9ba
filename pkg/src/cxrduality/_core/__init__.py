"""Ray-casting kernels.

The compiled Cython kernel is used when it has been built; otherwise the
numpy implementation is selected. ``CXRDUALITY_BACKEND=python`` forces the
fallback.
"""

import os

from . import _fallback

_requested = os.environ.get("CXRDUALITY_BACKEND", "auto").lower()

if _requested == "python":
    trace_rays = _fallback.trace_rays
    BACKEND = "python"
else:
    try:
        from ._siddon import trace_rays
        BACKEND = "cython"
    except ImportError:
        if _requested == "cython":
            raise
        trace_rays = _fallback.trace_rays
        BACKEND = "python"

KERNELS = {"python": _fallback.trace_rays}
try:
    from ._siddon import trace_rays as _compiled

    KERNELS["cython"] = _compiled
except ImportError:
    pass

__all__ = ["trace_rays", "BACKEND", "KERNELS"]
