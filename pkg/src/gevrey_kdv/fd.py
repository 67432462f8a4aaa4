"""Finite-difference derivatives along a uniform ladder (used for the xi-direction)."""
from functools import lru_cache

import numpy as np


def fornberg_weights(z, nodes, order):
    """Weights for derivatives ``0..order`` at ``z`` from values on ``nodes``.

    Returns an array of shape ``(order + 1, len(nodes))``; row ``d`` holds the
    weights approximating the ``d``-th derivative.
    """
    nodes = np.asarray(nodes, dtype=float)
    n = len(nodes)
    c = np.zeros((order + 1, n))
    c1 = 1.0
    c4 = nodes[0] - z
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, order)
        c2 = 1.0
        c5 = c4
        c4 = nodes[i] - z
        for j in range(i):
            c3 = nodes[i] - nodes[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[k, i] = c1 * (k * c[k - 1, i - 1] - c5 * c[k, i - 1]) / c2
                c[0, i] = -c1 * c5 * c[0, i - 1] / c2
            for k in range(mn, 0, -1):
                c[k, j] = (c4 * c[k, j] - k * c[k - 1, j]) / c3
            c[0, j] = c4 * c[0, j] / c3
        c1 = c2
    return c


@lru_cache(maxsize=64)
def _stencils(order, accuracy, n):
    """Centered interior stencil plus one-sided rows for the first/last points."""
    half = ((order + 1) // 2 * 2 - 1 + accuracy) // 2
    centered = fornberg_weights(0.0, np.arange(-half, half + 1), order)[order]
    width = order + accuracy
    if width > n or 2 * half + 1 > n:
        raise ValueError("ladder too short for the requested finite difference")
    edge = []
    for i in range(half):
        edge.append(fornberg_weights(float(i), np.arange(width), order)[order])
    return half, centered, width, np.array(edge)


def ladder_derivative(values, order, step, axis=-1, accuracy=4):
    """Derivative of ``order`` along ``axis`` of samples on a uniform ladder.

    Interior points use a centered stencil of the given accuracy; the first and
    last few points use one-sided stencils of ``order + accuracy`` nodes.
    """
    if order == 0:
        return np.array(values, copy=True)
    a = np.moveaxis(np.asarray(values), axis, 0)
    n = a.shape[0]
    half, centered, width, edge = _stencils(order, accuracy, n)
    out = np.zeros(a.shape, dtype=np.result_type(a.dtype, float))
    for s, wgt in zip(range(-half, half + 1), centered):
        if wgt != 0.0:
            out[half:n - half] += wgt * a[half + s:n - half + s]
    tail = a[::-1][:width]
    sign = (-1) ** order
    for i in range(half):
        out[i] = np.tensordot(edge[i], a[:width], axes=(0, 0))
        # mirror image of the same stencil at the far end
        out[n - 1 - i] = sign * np.tensordot(edge[i], tail, axes=(0, 0))
    out /= step ** order
    return np.moveaxis(out, 0, axis)
