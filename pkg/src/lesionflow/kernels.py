"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the pure-Python
reference is used.  Set ``LESIONFLOW_PURE_PYTHON=1`` to force the fallback.
"""

import logging
import os

from . import _pykernels

logger = logging.getLogger(__name__)

if os.environ.get("LESIONFLOW_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # pragma: no cover - depends on the build
        logger.info("compiled kernels unavailable, using pure-Python fallback")
        _impl = _pykernels

BACKEND = "compiled" if _impl is not _pykernels else "python"

closest_points = _impl.closest_points
trace_paths = _impl.trace_paths
graph_distances = _impl.graph_distances

TRACE_OK = _pykernels.TRACE_OK
TRACE_BOUNDARY = _pykernels.TRACE_BOUNDARY
TRACE_CAP = _pykernels.TRACE_CAP


def backends():
    """Return ``{name: module}`` for every importable backend."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels
    except ImportError:  # pragma: no cover
        pass
    else:
        out["compiled"] = _ckernels
    return out
