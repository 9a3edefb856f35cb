import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "onn.engine._kernels",
        ["src/onn/engine/_kernels.pyx"],
        include_dirs=[np.get_include()],
        # no FMA contraction: keeps results bit-identical to the numpy fallback
        extra_compile_args=["-O3", "-ffp-contract=off"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}))
