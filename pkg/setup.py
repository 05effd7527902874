"""Build script for the compiled kernel extension.

The extension is optional at runtime: segprompt.backend falls back to the
pure-numpy kernels when the compiled module is missing, so a failed build
leaves a working (slower) package behind.

Build in place with:  python setup.py build_ext --inplace
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "segprompt.backend._kernels",
                ["src/segprompt/backend/_kernels.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
