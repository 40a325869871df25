"""Builds the native extension with setuptools + pybind11.

The C++ sources are compiled directly (same files the CMake build uses), so
`pip install .` needs no CMake. Set EIGEN3_INCLUDE_DIR if Eigen headers are
not at the usual system location.
"""

import os
from glob import glob

from pybind11.setup_helpers import Pybind11Extension, build_ext
from setuptools import setup

eigen = os.environ.get("EIGEN3_INCLUDE_DIR", "/usr/include/eigen3")

ext = Pybind11Extension(
    "diffsteer._diffsteer",
    sources=sorted(glob("src/*.cpp")) + ["bindings/module.cpp"],
    include_dirs=["include", "vendor", eigen],
    cxx_std=20,
)

setup(ext_modules=[ext], cmdclass={"build_ext": build_ext})
