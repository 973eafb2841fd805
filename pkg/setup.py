import os

import numpy
from Cython.Build import cythonize
from setuptools import Extension, setup

# -march=native matters here: the narrow-phase kernels vectorize well.
# Set MOCHI_NO_NATIVE=1 when building wheels meant for other machines.
compile_args = ["-O3", "-fno-math-errno", "-fopenmp"]
if not os.environ.get("MOCHI_NO_NATIVE"):
    compile_args.append("-march=native")

ext = Extension(
    "mochi._kernels",
    ["src/mochi/_kernels.pyx"],
    include_dirs=[numpy.get_include()],
    extra_compile_args=compile_args,
    extra_link_args=["-fopenmp"],
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
)

setup(ext_modules=cythonize([ext], language_level=3))
