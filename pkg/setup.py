import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "cardioem.ionic._ttp06_cy",
                ["src/cardioem/ionic/_ttp06_cy.pyx"],
                extra_compile_args=["-O3", "-ffp-contract=off"],
                include_dirs=[numpy.get_include()],
            ),
            Extension(
                "cardioem._mech_cy",
                ["src/cardioem/_mech_cy.pyx"],
                extra_compile_args=["-O3", "-ffp-contract=off"],
                include_dirs=[numpy.get_include()],
            ),
        ],
        language_level=3,
    )
except ImportError:
    # Pure-Python fallback kernel is selected at import time, so a missing
    # Cython toolchain only costs speed, not functionality.
    ext_modules = []

setup(ext_modules=ext_modules)
