"""Kernel backend selection.

MORAN_BACKEND=numba forces the jit kernels (error if numba is missing),
MORAN_BACKEND=numpy forces the pure-numpy fallback, anything else (or
unset) tries numba first. `kernels` is the module the ops dispatch to.
"""

from __future__ import annotations

import os

_choice = os.environ.get("MORAN_BACKEND", "auto").strip().lower()

if _choice not in ("auto", "", "numba", "numpy"):
    raise ValueError(f"MORAN_BACKEND must be auto|numba|numpy, got {_choice!r}")

if _choice == "numpy":
    from . import _kernels_numpy as kernels
elif _choice == "numba":
    from . import _kernels_numba as kernels
else:
    try:
        from . import _kernels_numba as kernels
    except ImportError:
        from . import _kernels_numpy as kernels

BACKEND = kernels.NAME
