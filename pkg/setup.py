import numpy as np
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Skip the compiled kernels when no compiler is available; the package falls back at import."""

    def run(self):
        try:
            super().run()
        except Exception as err:                     # noqa: BLE001 - any build failure means fallback
            print("valleywalk: compiled kernels not built (%s); using the pure-Python fallback" % err)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as err:                     # noqa: BLE001
            print("valleywalk: skipping %s (%s)" % (ext.name, err))


try:
    from Cython.Build import cythonize
except ImportError:                                  # build from the shipped C file
    source, cythonize = "src/valleywalk/_kernels.c", None
else:
    source = "src/valleywalk/_kernels.pyx"

extensions = [
    Extension(
        "valleywalk._kernels",
        [source],
        include_dirs=[np.get_include()],
        # no fast-math: results must match the pure-Python kernels bit for bit
        extra_compile_args=["-O2"],
    )
]
if cythonize is not None:
    extensions = cythonize(extensions, compiler_directives={"language_level": "3"})

setup(ext_modules=extensions, cmdclass={"build_ext": OptionalBuildExt})
