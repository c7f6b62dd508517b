"""Hot geometry kernels with selectable backend.

Two interchangeable implementations exist: a numba-jitted one and a
pure-numpy fallback. The active backend is chosen once at import time
from the ``SEGBOOST_BACKEND`` environment variable:

* ``auto`` (default) - numba if importable, else numpy
* ``numba``          - require the jitted backend
* ``numpy``          - force the fallback

Both produce bit-identical results; see ``benchmarks/bench_kernels.py``
for the speed comparison.
"""

import os

_choice = os.environ.get("SEGBOOST_BACKEND", "auto").lower()

if _choice not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"SEGBOOST_BACKEND must be one of auto|numba|numpy, got {_choice!r}"
    )

if _choice == "numpy":
    from segboost.kernels import _numpy_impl as _impl
elif _choice == "numba":
    from segboost.kernels import _numba_impl as _impl
else:
    try:
        from segboost.kernels import _numba_impl as _impl
    except ImportError:
        from segboost.kernels import _numpy_impl as _impl

star_dists = _impl.star_dists
three_class_map = _impl.three_class_map
prep_polygon_masks = _impl.prep_polygon_masks
nms_keep = _impl.nms_keep
render_masks = _impl.render_masks


def backend_name() -> str:
    """Name of the active kernel backend ('numba' or 'numpy')."""
    return _impl.BACKEND
