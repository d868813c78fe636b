import os

from setuptools import setup

ext_modules = []
if os.environ.get("PICONOISE_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "piconoise._tvcore",
                    ["src/piconoise/_tvcore.pyx"],
                    include_dirs=[np.get_include(), "src/piconoise"],
                    # keep IEEE rounding identical to the numpy fallback
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
