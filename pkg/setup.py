"""Build script for the compiled extension core.

The package works without the extension (a pure-NumPy fallback is selected at
import time), so the build is best-effort: if Cython or a C compiler is
unavailable the extension is simply skipped.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    extensions = [
        Extension(
            "fslm._core._kernels",
            ["src/fslm/_core/_kernels.pyx"],
            include_dirs=[numpy.get_include()],
            extra_compile_args=["-O3"],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        )
    ]
    ext_modules = cythonize(extensions, language_level=3)
except ImportError:
    pass

setup(ext_modules=ext_modules)
