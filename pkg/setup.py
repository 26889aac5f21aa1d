from setuptools import Extension, setup
from Cython.Build import cythonize

# Compiled kernels for the chain-propagation and pooling inner loops.
# The package runs without them (numpy fallback selected at import),
# so a failed build is tolerable: `pip install -e . --no-build-isolation`.
ext_modules = [
    Extension(
        "gvit._chainops",
        ["src/gvit/_chainops.pyx"],
        extra_compile_args=["-O3"],
    )
]

setup(
    ext_modules=cythonize(
        ext_modules,
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    ),
)
