"""Build script: compiles the optional Cython kernel module.

The package works without the extension (numpy fallback in
sgnet.kernels.pure); the build degrades gracefully if Cython or a C
compiler is unavailable.
"""

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "sgnet.kernels._fast",
                ["src/sgnet/kernels/_fast.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
