"""Symbols carried together with their x-derivatives.

An :class:`XJetSymbol` stores ``d_x^b p`` for ``b = 0..K`` on the symbol grid,
so products follow the Leibniz rule exactly and ``D_x`` is a shift.  The
xi-derivatives use the same fourth-order ladder differences as
:class:`~gevrey_kdv.psdo_calculus.Symbol`.
"""
from math import comb, factorial

import numpy as np

from .fd import ladder_derivative
from .jets import Jet
from .psdo_calculus import Symbol, spectral_dx


class XJetSymbol:
    """Symbol table with an x-derivative stack of order ``K``.

    Parameters
    ----------
    grid : GridSpec
    jet : Jet
        Normalised Taylor coefficients in ``x``, shape ``(K + 1, N, N)``.
    """

    __array_priority__ = 60

    def __init__(self, grid, jet):
        self.grid = grid
        self.jet = jet if isinstance(jet, Jet) else Jet(jet)

    # constructors -------------------------------------------------------
    @classmethod
    def from_stack(cls, grid, stack):
        """From ``stack[b] = d_x^b p`` (shape ``(K+1, N, N)``)."""
        stack = np.asarray(stack)
        return cls(grid, Jet.from_derivatives(list(stack)))

    @classmethod
    def from_x(cls, grid, xstack):
        """Function of ``x`` only; ``xstack[b]`` is its ``b``-th derivative on the grid."""
        xstack = np.asarray(xstack)
        stack = np.broadcast_to(xstack[:, :, None], xstack.shape + (grid.N,))
        return cls.from_stack(grid, stack)

    @classmethod
    def from_x_values(cls, grid, values, order):
        """Function of ``x`` only, differentiated spectrally."""
        values = np.asarray(values, dtype=complex)
        return cls.from_x(grid, [spectral_dx(values, grid, b) for b in range(order + 1)])

    @classmethod
    def from_xi(cls, grid, values, order):
        """Function of ``xi`` only (ascending frequencies)."""
        values = np.asarray(values)
        c = np.zeros((order + 1, grid.N, grid.N), dtype=np.result_type(values, float))
        c[0] = values[None, :]
        return cls(grid, Jet(c))

    @classmethod
    def from_table(cls, grid, table, order):
        """Periodic table differentiated spectrally in ``x``."""
        table = np.asarray(table, dtype=complex)
        return cls.from_stack(grid, [spectral_dx(table, grid, b, axis=0) for b in range(order + 1)])

    # access -------------------------------------------------------------
    @property
    def order(self):
        return self.jet.order

    @property
    def table(self):
        return self.jet.value

    def stack(self):
        return self.jet.derivatives()

    def symbol(self, **meta):
        return Symbol(self.grid, self.table, **meta)

    def truncate(self, order):
        return XJetSymbol(self.grid, self.jet.truncate(order))

    # arithmetic ---------------------------------------------------------
    def _other(self, other):
        return other.jet if isinstance(other, XJetSymbol) else other

    def __add__(self, other):
        return XJetSymbol(self.grid, self.jet + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return XJetSymbol(self.grid, self.jet - self._other(other))

    def __rsub__(self, other):
        return XJetSymbol(self.grid, -self.jet + other)

    def __neg__(self):
        return XJetSymbol(self.grid, -self.jet)

    def __mul__(self, other):
        if isinstance(other, XJetSymbol):
            return XJetSymbol(self.grid, self.jet * other.jet)
        # x-independent factors (scalars or xi-rows) scale every level
        return XJetSymbol(self.grid, Jet(self.jet.c * np.asarray(other)))

    __rmul__ = __mul__

    def real(self):
        return XJetSymbol(self.grid, Jet(self.jet.c.real.astype(complex)))

    def imag(self):
        return XJetSymbol(self.grid, Jet(self.jet.c.imag.astype(complex)))

    def exp(self):
        return XJetSymbol(self.grid, self.jet.exp())

    # derivatives --------------------------------------------------------
    def dxi(self, alpha=1):
        """``d_xi^alpha`` on every level of the stack."""
        if alpha == 0:
            return self
        step = np.pi / self.grid.L
        return XJetSymbol(self.grid, Jet(ladder_derivative(self.jet.c, alpha, step, axis=-1)))

    def dx(self, beta=1):
        """``d_x^beta``; lowers the stack order by ``beta``."""
        j = self.jet
        for _ in range(beta):
            j = j.diff()
        return XJetSymbol(self.grid, j)

    def Dx(self, alpha=1):
        return self.dx(alpha) * ((-1j) ** alpha)


def compose(p, q, n_terms):
    """Truncated left composition ``sum_{a < n_terms} (1/a!) d_xi^a p D_x^a q``."""
    out = p * q
    for a in range(1, n_terms):
        out = out + p.dxi(a) * q.Dx(a) * (1.0 / factorial(a))
    return out


def bell_ratios(derivs):
    """Complete Bell polynomials ``e^-g d^n e^g`` from ``derivs[j] = d^(j+1) g``.

    Returns the list ``[B_0, ..., B_n]`` with ``n = len(derivs)``; entries may
    be arrays or :class:`XJetSymbol` objects.
    """
    out = [1.0]
    for m in range(len(derivs)):
        acc = 0.0
        for j in range(m + 1):
            acc = acc + comb(m, j) * out[m - j] * derivs[j]
        out.append(acc)
    return out


def multiplier_conjugation(c, lam_xi_derivs, n_terms):
    """Symbol of ``exp(L)(D) op(c) exp(-L)(D)`` for an x-independent weight ``L``.

    ``lam_xi_derivs[j]`` is the row ``d_xi^(j+1) L``; the expansion is
    ``sum_{a < n_terms} (1/a!) (e^-L d_xi^a e^L) D_x^a c``.
    """
    bells = bell_ratios(list(lam_xi_derivs[: n_terms - 1]))
    out = c
    for a in range(1, n_terms):
        out = out + c.Dx(a) * (np.asarray(bells[a])[None, :] / factorial(a))
    return out


# ---------------------------------------------------------------------------
# graded calculus: a term carrying g pairs (d_xi, D_x) has grade g; every
# product keeps only grades below n_terms, so truncations never mix orders.


def graded_compose(ps, qs, n_terms):
    """Compose graded expansions ``ps`` and ``qs`` (lists indexed by grade).

    Returns the list ``out[g]`` of grade-``g`` parts of ``op(p) op(q)`` for
    ``g < n_terms``.
    """
    out = [None] * n_terms
    for gp, p in enumerate(ps):
        for gq, q in enumerate(qs):
            if p is None or q is None:
                continue
            for a in range(n_terms - gp - gq):
                term = p.dxi(a) * q.Dx(a) * (1.0 / factorial(a)) if a else p * q
                g = gp + gq + a
                out[g] = term if out[g] is None else out[g] + term
    return out


def graded_parametrix(lam, n_terms):
    """Graded symbol ``s`` with ``exp(lam)(x, D) op(s) = I`` up to grade ``n_terms``.

    ``s_0 = exp(-lam)`` and ``s_n = -sum_{a=1}^n (1/a!) X_a D_x^a s_{n-a}``
    where ``X_a = exp(-lam) d_xi^a exp(lam)``.
    """
    xs = bell_ratios([lam.dxi(j) for j in range(1, n_terms)])
    s = [(-lam).exp()]
    for n in range(1, n_terms):
        acc = None
        for a in range(1, n + 1):
            term = xs[a] * s[n - a].Dx(a) * (1.0 / factorial(a))
            acc = term if acc is None else acc + term
        s.append(-acc)
    return s


def graded_multiplier_conjugation(cs, lam_xi_derivs, n_terms):
    """``exp(L)(D) op(c) exp(-L)(D)`` for a graded ``c``; returns the summed symbol.

    ``lam_xi_derivs[j]`` is the row ``d_xi^(j+1) L`` of the x-independent weight.
    """
    bells = bell_ratios(list(lam_xi_derivs[: n_terms - 1]))
    out = None
    for g, c in enumerate(cs):
        if c is None:
            continue
        for a in range(n_terms - g):
            term = c.Dx(a) * (np.asarray(bells[a])[None, :] / factorial(a)) if a else c
            out = term if out is None else out + term
    return out
