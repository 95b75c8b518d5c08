"""Kernel backend selection.

The hot loops (tree growth, row routing, out-of-bag CRPS risk, permutation
scans) exist twice: a numba ``@njit`` implementation and a pure-numpy
fallback. The active backend is chosen once at import time:

* ``QRFSELECT_BACKEND=numba``  force numba (error if unavailable),
* ``QRFSELECT_BACKEND=numpy``  force the numpy fallback,
* unset: numba when importable, numpy otherwise.

``benchmarks/bench_backends.py`` imports both implementations directly and
times them against each other.
"""

import os

_env = os.environ.get("QRFSELECT_BACKEND", "").strip().lower()

if _env not in ("", "numba", "numpy"):
    raise RuntimeError(
        f"QRFSELECT_BACKEND={_env!r} not understood (use 'numba' or 'numpy')"
    )

if _env == "numpy":
    HAVE_NUMBA = False
else:
    try:
        import numba  # noqa: F401

        HAVE_NUMBA = True
    except ImportError:
        if _env == "numba":
            raise
        HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"
