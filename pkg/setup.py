"""Build the optional compiled kernel; the package works without it."""

from setuptools import setup

ext_modules = []
try:
    import numpy  # noqa: F401
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/icr/_kernels.pyx"],
        compiler_directives={"language_level": "3"},
        quiet=True,
    )
except Exception as exc:  # no Cython or no compiler: pure-Python fallback
    print(f"skipping compiled kernel: {exc}")

setup(ext_modules=ext_modules)
