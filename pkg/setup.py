"""Build script: compiles the optional Cython kernel extension.

The package works without the extension (pure numpy fallback is selected
at import), so a missing compiler or missing Cython only costs speed.
"""

from setuptools import setup

try:
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "aggnorm.kernels._speedups",
                ["src/aggnorm/kernels/_speedups.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
