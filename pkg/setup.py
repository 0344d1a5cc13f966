import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("LOPT_PURE_PYTHON") != "1":
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "lopt._ckernels",
                    ["src/lopt/_ckernels.pyx"],
                    extra_compile_args=["-O3"],
                )
            ],
            language_level=3,
        )
    except ImportError:
        # No Cython: install pure, lopt.backend falls back to numpy kernels.
        ext_modules = []

setup(ext_modules=ext_modules)
