"""Backend selection for the hot numeric kernels.

Every kernel in :mod:`pushlab.kernels` has two implementations: a numba
``@njit`` version built from explicit loops and a vectorized pure-numpy
version. The active path is chosen once at import time from the
``PUSHLAB_BACKEND`` environment variable:

    PUSHLAB_BACKEND=numba   use the JIT kernels (default when numba imports)
    PUSHLAB_BACKEND=numpy   force the pure-numpy fallback

Tests and the benchmark call both paths directly, so the dispatcher also
exposes them unconditionally.
"""

import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only on stripped installs
    numba = None
    HAVE_NUMBA = False

_CHOICE = os.environ.get("PUSHLAB_BACKEND", "").strip().lower()

if _CHOICE not in ("", "numba", "numpy"):
    raise RuntimeError(f"PUSHLAB_BACKEND must be 'numba' or 'numpy', got {_CHOICE!r}")
if _CHOICE == "numba" and not HAVE_NUMBA:
    raise RuntimeError("PUSHLAB_BACKEND=numba but numba is not importable")

USE_NUMBA = HAVE_NUMBA if _CHOICE == "" else _CHOICE == "numba"


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"


def njit(func):
    """Compile with numba when available; otherwise return the function."""
    if HAVE_NUMBA:
        return numba.njit(func, cache=True)
    return func
