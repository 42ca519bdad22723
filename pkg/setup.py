import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# Compiled hot kernels (ray marching, rasterization). The package falls back
# to the pure-NumPy backend in voxatar.kernels if the extension is missing.
extensions = [
    Extension(
        "voxatar.kernels._native",
        ["src/voxatar/kernels/_native.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={"language_level": "3"},
    )
)
