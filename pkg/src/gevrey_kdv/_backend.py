"""Select the compiled symbol kernels when available, else the numpy fallback."""
import os

try:
    if os.environ.get("GEVREY_KDV_PURE_PYTHON"):
        raise ImportError("pure-Python backend requested")
    from ._kernels import reverse_coeffs, symbol_apply

    BACKEND = "cython"
except ImportError:
    from ._kernels_py import reverse_coeffs, symbol_apply

    BACKEND = "python"

__all__ = ["BACKEND", "reverse_coeffs", "symbol_apply"]
