"""Build script: compiles the optional z-buffer extension.

The package works without the extension (a NumPy fallback is selected at
import time), so a failed compile should not block installation. Build with
the extension via `pip install -e . --no-build-isolation`.
"""

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        "src/cloudmark/_kernels/_zbuf.pyx",
        language_level="3",
    )
    include_dirs = [numpy.get_include()]
except ImportError:
    include_dirs = []

setup(
    ext_modules=ext_modules,
    include_dirs=include_dirs,
)
