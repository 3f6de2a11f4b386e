import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("MULTIPLEXNET_PURE_PYTHON"):
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [Extension(
                "multiplexnet._kernels",
                ["src/multiplexnet/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                optional=True,
            )],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
