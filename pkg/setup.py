import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "avpgate.diffcore._kernels",
        ["src/avpgate/diffcore/_kernels.pyx"],
        include_dirs=[np.get_include(), "src/avpgate/diffcore"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        # fast-math lets gcc vectorise exp via libmvec; finite-math stays off
        # so the saturating sigmoid keeps its inf handling.
        extra_compile_args=["-O3", "-ffast-math", "-fno-finite-math-only"],
    )
]

setup(
    ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}),
)
