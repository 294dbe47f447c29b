"""Kernel backend selection.

The stepping kernels exist twice: a numba-jitted version (default) and a
vectorised pure-numpy fallback.  ``CONEFLOW_BACKEND=numpy`` (or ``numba``)
selects the path at import time; if numba is unavailable the fallback is
used automatically.
"""

from __future__ import annotations

import os
import warnings

_ENV_VAR = "CONEFLOW_BACKEND"


def get_backend(name: str):
    """Return the kernel module for ``name`` ('numba' or 'numpy')."""
    name = name.strip().lower()
    if name in ("numpy", "np"):
        from . import numpy_impl

        return numpy_impl
    if name == "numba":
        from . import numba_impl

        return numba_impl
    raise ValueError(f"unknown backend {name!r}; expected 'numba' or 'numpy'")


def _select():
    requested = os.environ.get(_ENV_VAR, "numba")
    try:
        return get_backend(requested), requested.strip().lower()
    except ImportError:
        warnings.warn(
            f"backend {requested!r} unavailable, falling back to numpy", RuntimeWarning
        )
        from . import numpy_impl

        return numpy_impl, "numpy"


active, ACTIVE_NAME = _select()

OK = active.OK
ERR_DEGENERATE = active.ERR_DEGENERATE
ERR_SINGULAR = active.ERR_SINGULAR
