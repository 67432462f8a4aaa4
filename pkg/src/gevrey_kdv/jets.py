"""Truncated Taylor jets in one variable, evaluated pointwise on arrays.

A :class:`Jet` of order ``K`` stores ``c[n] = f^(n)(x) / n!`` for
``n = 0..K`` at every sample point, so products, quotients, powers and
exponentials of jets give exact derivatives up to order ``K`` without any
differencing.
"""
from math import factorial

import numpy as np


class Jet:
    """Normalised Taylor coefficients, shape ``(K + 1,) + sample_shape``."""

    __array_priority__ = 50

    def __init__(self, coeffs):
        self.c = np.asarray(coeffs)

    @property
    def order(self):
        return self.c.shape[0] - 1

    @property
    def value(self):
        return self.c[0]

    @classmethod
    def variable(cls, x, order):
        x = np.asarray(x, dtype=float)
        c = np.zeros((order + 1,) + x.shape)
        c[0] = x
        if order >= 1:
            c[1] = 1.0
        return cls(c)

    @classmethod
    def constant(cls, value, order, shape=()):
        value = np.asarray(value)
        c = np.zeros((order + 1,) + np.broadcast_shapes(value.shape, shape), dtype=value.dtype if np.iscomplexobj(value) else float)
        c[0] = value
        return cls(c)

    @classmethod
    def from_derivatives(cls, derivs):
        """Build from a list ``[f, f', f'', ...]`` of sampled derivatives."""
        return cls(np.array([d / factorial(n) for n, d in enumerate(derivs)]))

    def derivative(self, n):
        """Sampled ``n``-th derivative."""
        return self.c[n] * factorial(n)

    def derivatives(self):
        return np.array([self.derivative(n) for n in range(self.order + 1)])

    def truncate(self, order):
        return Jet(self.c[: order + 1])

    def diff(self):
        """Jet of the derivative, one order shorter."""
        n = np.arange(1, self.order + 1).reshape((-1,) + (1,) * (self.c.ndim - 1))
        return Jet(self.c[1:] * n)

    def _lift(self, other):
        if isinstance(other, Jet):
            k = min(self.order, other.order)
            return self.truncate(k), other.truncate(k)
        return self, Jet.constant(other, self.order, self.c.shape[1:])

    def __add__(self, other):
        a, b = self._lift(other)
        return Jet(a.c + b.c)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.c)

    def __sub__(self, other):
        a, b = self._lift(other)
        return Jet(a.c - b.c)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.c * other)
        a, b = self._lift(other)
        k = a.order
        out = np.zeros(np.broadcast_shapes(a.c.shape, b.c.shape), dtype=np.result_type(a.c, b.c))
        for n in range(k + 1):
            for j in range(n + 1):
                out[n] += a.c[j] * b.c[n - j]
        return Jet(out)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.c / other)
        a, b = self._lift(other)
        return a * b.reciprocal()

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def reciprocal(self):
        c = self.c
        q = np.zeros_like(c, dtype=np.result_type(c, float))
        q[0] = 1.0 / c[0]
        for n in range(1, self.order + 1):
            acc = np.zeros_like(q[0])
            for k in range(1, n + 1):
                acc = acc + c[k] * q[n - k]
            q[n] = -acc / c[0]
        return Jet(q)

    def exp(self):
        c = self.c
        e = np.zeros_like(c, dtype=np.result_type(c, float))
        e[0] = np.exp(c[0])
        for n in range(1, self.order + 1):
            acc = np.zeros_like(e[0])
            for k in range(1, n + 1):
                acc = acc + k * c[k] * e[n - k]
            e[n] = acc / n
        return Jet(e)

    def log(self):
        c = self.c
        lg = np.zeros_like(c, dtype=np.result_type(c, float))
        lg[0] = np.log(c[0])
        for n in range(1, self.order + 1):
            acc = np.zeros_like(lg[0])
            for k in range(1, n):
                acc = acc + k * lg[k] * c[n - k]
            lg[n] = (c[n] - acc / n) / c[0]
        return Jet(lg)

    def __pow__(self, p):
        """Real power of a jet with nonzero value (integer powers use products)."""
        if isinstance(p, (int, np.integer)) and p >= 0:
            out = Jet.constant(1.0, self.order, self.c.shape[1:])
            for _ in range(int(p)):
                out = out * self
            return out
        c = self.c
        y = np.zeros_like(c, dtype=np.result_type(c, float))
        y[0] = c[0] ** p
        for n in range(1, self.order + 1):
            acc = np.zeros_like(y[0])
            for k in range(1, n + 1):
                acc = acc + ((p + 1) * k - n) * c[k] * y[n - k]
            y[n] = acc / (n * c[0])
        return Jet(y)

    def sqrt(self):
        return self ** 0.5

    def compose(self, derivs):
        """Jet of ``f(self)`` given ``derivs[m] = f^(m)(self.value)``, m = 0..K."""
        delta = Jet(np.concatenate([np.zeros_like(self.c[:1]), self.c[1:]]))
        out = Jet(np.zeros(self.c.shape, dtype=np.result_type(np.asarray(derivs[0]), self.c)))
        out.c[0] = derivs[0]
        power = Jet.constant(1.0, self.order, self.c.shape[1:])
        for m in range(1, self.order + 1):
            power = power * delta
            out = out + power * (np.asarray(derivs[m]) / factorial(m))
        return out

    def where(self, mask, other):
        """Pointwise selection between two jets on the sample axes."""
        a, b = self._lift(other)
        return Jet(np.where(mask, a.c, b.c))


def bracket_jet(x, order):
    """Jet of ``<x> = (1 + x^2)^(1/2)`` in the variable ``x``."""
    t = Jet.variable(x, order)
    return (t * t + 1.0).sqrt()
