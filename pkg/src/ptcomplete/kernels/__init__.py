"""Hot point-set kernels with a selectable backend.

``PTCOMPLETE_DISABLE_NUMBA=1`` (read at import time) forces the pure-numpy
path; otherwise the numba kernels are used when numba imports cleanly.
Both backends are always reachable through :data:`BACKENDS` for testing and
benchmarking.
"""

import os

from . import numpy_backend

BACKENDS = {"numpy": numpy_backend}

try:
    from . import numba_backend

    BACKENDS["numba"] = numba_backend
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba_backend = None

if os.environ.get("PTCOMPLETE_DISABLE_NUMBA") == "1" or numba_backend is None:
    _active = numpy_backend
else:
    _active = numba_backend

BACKEND = _active.NAME

fps = _active.fps
topk_rows = _active.topk_rows
knn_direct = _active.knn_direct
nn_search = _active.nn_search
gather_max = _active.gather_max
scatter_max_grad = _active.scatter_max_grad
scatter_add_rows = _active.scatter_add_rows
