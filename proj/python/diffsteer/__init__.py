"""Frozen-backbone diffusion steering on toy 2D data.

Thin re-export of the native extension. Installed builds place the extension
inside this package; in-tree CMake builds leave it next to the other build
artifacts, found via PYTHONPATH.
"""

try:
    from ._diffsteer import *  # noqa: F401,F403
    from ._diffsteer import __version__  # noqa: F401
except ImportError:  # in-tree build: extension is top-level
    from _diffsteer import *  # noqa: F401,F403
    from _diffsteer import __version__  # noqa: F401
