import os

from setuptools import setup

# The flow-assembly kernel is an optional compiled speedup; the package
# falls back to the pure-Python implementation when it is absent.
ext_modules = []
if not os.environ.get("RANGEKIT_NO_EXT"):
    try:
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "rangekit.flows._kernel",
                    ["src/rangekit/flows/_kernel.pyx"],
                    language="c++",
                    extra_compile_args=["-O3"],
                    optional=True,
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
