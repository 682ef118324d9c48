"""Build script for the optional compiled convolution kernels.

The package works without the extension: kernel selection happens at
import time and defaults to the numpy im2col path, which is faster at
the default image sizes on a BLAS-backed numpy. The compiled direct
kernel needs no im2col scratch memory and wins once patch matrices
outgrow the cache; set FACEFRONT_BACKEND=cython to use it. Cython and a
C compiler are only needed when the extension is built.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "facefront.kernels._conv_cy",
                ["src/facefront/kernels/_conv_cy.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3", "-march=native", "-funroll-loops"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
