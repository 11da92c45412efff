"""Backend selection for the ensemble hot kernels.

The compiled extension is used when it imports; set
``CHUNKVOTE_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

from . import _pykernels as py

BACKEND = "python"
if os.environ.get("CHUNKVOTE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = py
else:
    _impl = py

cosine_similarity = _impl.cosine_similarity
similarities_to_last = _impl.similarities_to_last
centered_mean = _impl.centered_mean
centered_weighted_mean = _impl.centered_weighted_mean
vote = _impl.vote


def compiled():
    """Return the compiled module, or None when it is unavailable."""
    try:
        from . import _ckernels
    except ImportError:
        return None
    return _ckernels
