"""Build hooks for the optional compiled rounding kernels.

The package is pure Python plus one optional Cython extension holding the
hot low-precision kernels.  If Cython or a C compiler is unavailable the
install still succeeds and the package falls back to the numpy
implementation at import time.
"""

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "flexkrylov.lowprec._chopext",
                ["src/flexkrylov/lowprec/_chopext.pyx"],
                include_dirs=[numpy.get_include()],
                # -ffast-math would break the rint-based round-to-nearest-even
                # contract, so only plain -O2 here.
                extra_compile_args=["-O2"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except Exception:
    ext_modules = []

setup(ext_modules=ext_modules)
