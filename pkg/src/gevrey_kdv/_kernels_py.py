"""Pure-numpy versions of the symbol kernels, used when the extension is absent."""
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=8)
def _phase(n):
    jk = np.outer(np.arange(n), np.arange(n)) % n
    return np.exp(2j * np.pi * jk / n)


def symbol_apply(p, c):
    """Return ``out[j] = sum_k p[j, k] c[k] exp(2 pi i j k / N)``."""
    p = np.asarray(p, dtype=complex)
    return (p * _phase(p.shape[0])) @ np.asarray(c, dtype=complex)


def reverse_coeffs(p, u):
    """Return ``coef[k] = (1/N) sum_j p[j, k] u[j] exp(-2 pi i j k / N)``."""
    p = np.asarray(p, dtype=complex)
    n = p.shape[0]
    return (np.asarray(u, dtype=complex) @ (p * _phase(n).conj())) / n
