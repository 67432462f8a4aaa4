"""Spectral laboratory for Gevrey well-posedness of third-order KdV-type equations."""
from ._backend import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
