"""Kernel backend selection.

`DNL_BACKEND` chooses the hot-kernel implementation:

    auto   (default) numba if importable, else pure numpy
    numba  require the jitted kernels, fail if numba is missing
    numpy  force the pure-numpy fallback

`DNL_THREADS` caps internal kernel parallelism (the kernels are serial by
design for bitwise reproducibility; the cap is applied to numba's thread
pool so any future parallel kernel inherits it).
"""

from __future__ import annotations

import os

from .errors import ConfigError

_choice = os.environ.get("DNL_BACKEND", "auto").lower()
if _choice not in ("auto", "numba", "numpy"):
    raise ConfigError(f"DNL_BACKEND must be auto, numba, or numpy, got {_choice!r}")

if _choice == "numpy":
    from . import kernels_numpy as kernels
else:
    try:
        from . import kernels_numba as kernels  # type: ignore[no-redef]
    except ImportError:
        if _choice == "numba":
            raise ConfigError("DNL_BACKEND=numba but numba is not importable")
        from . import kernels_numpy as kernels  # type: ignore[no-redef]

BACKEND = kernels.NAME


def backend_name() -> str:
    return BACKEND
