"""Build script for the optional compiled kernel core.

The package is fully functional without the extension: ``kgedet._kernels``
falls back to numpy implementations when ``kgedet._kernels._core`` is not
importable.  Set KGEDET_NO_EXTENSION=1 to skip compilation entirely.
"""

import os

from setuptools import Extension, setup


def extensions():
    if os.environ.get("KGEDET_NO_EXTENSION"):
        return []
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "kgedet._kernels._core",
        ["src/kgedet/_kernels/_core.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], language_level=3)


setup(ext_modules=extensions())
