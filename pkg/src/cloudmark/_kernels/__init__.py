"""Hot rasterization kernels: compiled extension with a NumPy fallback.

The compiled module is preferred when it imported cleanly; set
``CLOUDMARK_NO_EXT=1`` to force the fallback (useful for benchmarking the
two backends against each other).
"""

import os

from cloudmark._kernels import fallback

BACKEND = "numpy"
zbuffer_argmin = fallback.zbuffer_argmin

if not os.environ.get("CLOUDMARK_NO_EXT"):
    try:
        from cloudmark._kernels import _zbuf

        zbuffer_argmin = _zbuf.zbuffer_argmin
        BACKEND = "compiled"
    except ImportError:
        pass

__all__ = ["BACKEND", "zbuffer_argmin", "fallback"]
