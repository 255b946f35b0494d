"""Build script for the compiled kernel extension.

The extension is optional: if it fails to build (no compiler, no Cython),
the package installs anyway and orchard.kernels falls back to the numpy
implementations at import time.
"""

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "orchard.kernels._convcore",
                ["src/orchard/kernels/_convcore.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
