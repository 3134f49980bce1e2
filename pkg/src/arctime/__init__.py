"""Road-network travel-time estimation from sparse GPS trips."""

from ._jit import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
