"""Single-token chunked action decoding with vote-based action ensembling."""
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
