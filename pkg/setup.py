"""Build script: compiles the Runge-Kutta hot kernel when Cython and a C
compiler are available, otherwise installs the pure-Python package (the
kernel package falls back to its Python implementation at import)."""

from setuptools import Extension, setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [Extension("weylmap._kernel._rk", ["src/weylmap/_kernel/_rk.pyx"],
                   extra_compile_args=["-O3"])],
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # pragma: no cover - build environment dependent
    print(f"weylmap: skipping compiled kernel ({exc}); pure-Python fallback will be used")

setup(ext_modules=ext_modules)
