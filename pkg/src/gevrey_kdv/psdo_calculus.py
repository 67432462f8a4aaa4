"""Tabulated symbols, their left and right quantizations, and symbol calculus.

A symbol is sampled at every grid point ``x_j`` and every frequency ``xi_k``
(ascending order, column 0 is the Nyquist frequency, which quantization
ignores).  x-derivatives are spectral, xi-derivatives use fourth-order finite
differences along the frequency ladder.
"""
import json
from dataclasses import dataclass, field
from math import factorial

import numpy as np

from ._backend import reverse_coeffs, symbol_apply
from .fd import ladder_derivative
from .spectral_core import GridFunction, GridMismatchError, GridSpec, bracket

MAX_DERIVATIVE_DEPTH = 8
MAX_DENSE_N = 1024


class DepthCapError(ValueError):
    """Raised when a derivative depth exceeds :data:`MAX_DERIVATIVE_DEPTH`."""


class DenseSizeError(ValueError):
    """Raised when a dense matrix would exceed :data:`MAX_DENSE_N`."""


@dataclass(frozen=True, eq=False)
class Symbol:
    """Symbol ``p(x_j, xi_k)`` on a grid with declared orders.

    Parameters
    ----------
    grid : GridSpec
    table : ndarray, shape (N, N)
        Rows are grid points, columns are ascending frequencies.
    xi_order, x_order : float
        Declared orders in ``xi`` and ``x`` (metadata only).
    gevrey_mu : float
        Declared Gevrey regularity index.
    """

    grid: GridSpec
    table: np.ndarray = field(repr=False)
    xi_order: float = 0.0
    x_order: float = 0.0
    gevrey_mu: float = 2.0

    def __post_init__(self):
        t = np.array(self.table, dtype=complex)
        n = self.grid.N
        if t.shape != (n, n):
            t = np.broadcast_to(t, (n, n)).copy()
        if not np.all(np.isfinite(t)):
            raise ValueError("symbol table must be finite")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    @classmethod
    def from_function(cls, grid, f, **meta):
        """Sample ``f(x, xi)`` (broadcast over a column of x and a row of xi)."""
        return cls(grid, f(grid.x[:, None], grid.xi[None, :]), **meta)

    @classmethod
    def multiplier(cls, grid, m, **meta):
        return cls(grid, np.broadcast_to(m(grid.xi)[None, :], (grid.N, grid.N)), **meta)

    @classmethod
    def multiplication(cls, grid, a, **meta):
        a = a(grid.x) if callable(a) else np.asarray(a)
        return cls(grid, np.broadcast_to(np.asarray(a)[:, None], (grid.N, grid.N)), **meta)

    def _meta(self, **kw):
        meta = dict(xi_order=self.xi_order, x_order=self.x_order, gevrey_mu=self.gevrey_mu)
        meta.update(kw)
        return meta

    def replace(self, table, **kw):
        return Symbol(self.grid, table, **self._meta(**kw))

    def _check(self, other):
        if other.grid != self.grid:
            raise GridMismatchError("symbols live on different grids")

    def __add__(self, other):
        if isinstance(other, Symbol):
            self._check(other)
            return self.replace(self.table + other.table, xi_order=max(self.xi_order, other.xi_order))
        return self.replace(self.table + other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Symbol):
            self._check(other)
            return self.replace(self.table - other.table, xi_order=max(self.xi_order, other.xi_order))
        return self.replace(self.table - other)

    def __rsub__(self, other):
        return (-self) + other

    def __neg__(self):
        return self.replace(-self.table)

    def __mul__(self, other):
        if isinstance(other, Symbol):
            self._check(other)
            return self.replace(
                self.table * other.table,
                xi_order=self.xi_order + other.xi_order,
                x_order=self.x_order + other.x_order,
            )
        return self.replace(self.table * other)

    __rmul__ = __mul__

    def conj(self):
        return self.replace(self.table.conj())

    def reflect(self):
        """Symbol ``p(x, -xi)``; the Nyquist column maps to itself."""
        t = np.empty_like(self.table)
        t[:, 0] = self.table[:, 0]
        t[:, 1:] = self.table[:, :0:-1]
        return self.replace(t)

    def fft_table(self):
        """Table with the frequency axis in numpy FFT order, Nyquist zeroed."""
        t = np.fft.ifftshift(self.table, axes=1).copy()
        t[:, self.grid.nyquist_fft] = 0.0
        return np.ascontiguousarray(t)

    def dxi(self, alpha=1):
        """``d^alpha / d xi^alpha`` by finite differences on the frequency ladder."""
        if alpha > MAX_DERIVATIVE_DEPTH:
            raise DepthCapError(f"xi-derivative depth {alpha} exceeds cap")
        step = np.pi / self.grid.L
        return self.replace(ladder_derivative(self.table, alpha, step, axis=1),
                            xi_order=self.xi_order - alpha)

    def dx(self, beta=1):
        """``d^beta / dx^beta`` by spectral differentiation of every column."""
        if beta > MAX_DERIVATIVE_DEPTH:
            raise DepthCapError(f"x-derivative depth {beta} exceeds cap")
        return self.replace(spectral_dx(self.table, self.grid, beta, axis=0),
                            x_order=self.x_order - beta)

    def Dx(self, alpha=1):
        """``D_x^alpha = (-i d/dx)^alpha``."""
        return self.dx(alpha) * ((-1j) ** alpha)

    def to_csv(self, path):
        write_symbol_csv(self, path)


def spectral_dx(values, grid, order, axis=0):
    """Spectral ``order``-th x-derivative along ``axis`` (Nyquist zeroed)."""
    if order == 0:
        return np.array(values, dtype=complex, copy=True)
    xi = grid.xi_fft.copy()
    xi[grid.nyquist_fft] = 0.0
    shape = [1] * np.ndim(values)
    shape[axis] = grid.N
    mult = ((1j * xi) ** order).reshape(shape)
    return np.fft.ifft(np.fft.fft(values, axis=axis) * mult, axis=axis)


def quantize_apply(p, u):
    """Left quantization ``sum_k exp(i xi_k x) p(x, xi_k) u_hat(xi_k)``."""
    if p.grid != u.grid:
        raise GridMismatchError("symbol and function live on different grids")
    return GridFunction(u.grid, symbol_apply(p.fft_table(), u.coeffs()))


def reverse_quantize_apply(p, u):
    """Right (y-side) quantization: output coefficients ``(1/N) sum_j e^{-i xi_k y_j} p(y_j, xi_k) u_j``."""
    if p.grid != u.grid:
        raise GridMismatchError("symbol and function live on different grids")
    grid = u.grid
    coef = reverse_coeffs(p.fft_table(), np.ascontiguousarray(u.values, dtype=complex))
    coef[grid.nyquist_fft] = 0.0
    return GridFunction.from_coeffs(grid, coef)


def _dft_phase(n):
    jk = np.outer(np.arange(n), np.arange(n)) % n
    return np.exp(2j * np.pi * jk / n)


def quantize_matrix(p):
    """Dense matrix of the left quantization acting on grid samples."""
    n = p.grid.N
    if n > MAX_DENSE_N:
        raise DenseSizeError(f"N = {n} exceeds the dense limit {MAX_DENSE_N}")
    e = _dft_phase(n)
    return (p.fft_table() * e) @ e.conj() / n


def reverse_quantize_matrix(p):
    """Dense matrix of the right quantization acting on grid samples."""
    n = p.grid.N
    if n > MAX_DENSE_N:
        raise DenseSizeError(f"N = {n} exceeds the dense limit {MAX_DENSE_N}")
    e = _dft_phase(n)
    return e @ (p.fft_table().T * e.conj()) / n


def multiplier_matrix(grid, values_fft):
    """Dense matrix of a Fourier multiplier given its FFT-order values."""
    n = grid.N
    if n > MAX_DENSE_N:
        raise DenseSizeError(f"N = {n} exceeds the dense limit {MAX_DENSE_N}")
    e = _dft_phase(n)
    v = np.array(values_fft, dtype=complex)
    v[grid.nyquist_fft] = 0.0
    return (e * v[None, :]) @ e.conj() / n


def admissible_projector(grid):
    """Projector onto grid functions without Nyquist content (the discrete identity)."""
    return multiplier_matrix(grid, np.ones(grid.N))


DEALIAS_FRACTION = 2.0 / 3.0


def band_mask(grid, fraction=DEALIAS_FRACTION):
    """FFT-order mask of the dealiased band ``|xi| < fraction * max|xi|``."""
    m = np.abs(grid.xi_fft) < fraction * np.pi * grid.N / (2.0 * grid.L)
    m[grid.nyquist_fft] = False
    return m


def band_projector(grid, fraction=DEALIAS_FRACTION):
    """Projector onto the dealiased band; operator routes act on its range."""
    return multiplier_matrix(grid, band_mask(grid, fraction).astype(float))


def compose_asymptotic(p, q, n_terms):
    """Truncated composition ``sum_{a < n_terms} (1/a!) d_xi^a p . D_x^a q``."""
    p._check(q)
    if n_terms < 1:
        raise ValueError("n_terms must be at least 1")
    if n_terms - 1 > MAX_DERIVATIVE_DEPTH:
        raise DepthCapError(f"{n_terms} terms exceed the derivative-depth cap")
    total = p.table * q.table
    for a in range(1, n_terms):
        total = total + p.dxi(a).table * q.Dx(a).table / factorial(a)
    return Symbol(p.grid, total, xi_order=p.xi_order + q.xi_order,
                  x_order=p.x_order + q.x_order, gevrey_mu=max(p.gevrey_mu, q.gevrey_mu))


@dataclass
class SeminormReport:
    """Outcome of a derivative scan against a symbol-class bound.

    ``ratios[a, b]`` is the sup over the grid of the normalised derivative of
    order ``(a, b)``; ``fitted_A`` is the smallest ``A >= 1`` with
    ``ratios[a, b] <= C0 A^(a+b)`` where ``C0 = max(1, ratios[0, 0])``.
    """

    alpha_max: int
    beta_max: int
    worst_ratio: float
    worst_location: tuple
    fitted_A: float
    ratios: np.ndarray = field(repr=False)
    finite: bool = True


def fit_geometric_constant(ratios, offset=0, base=None):
    """Smallest ``A >= 1`` with ``ratios[a, b] <= base * A^(a+b+offset)``."""
    ratios = np.asarray(ratios, dtype=float)
    if base is None:
        base = max(1.0, ratios.flat[0]) if offset == 0 else 1.0
    a_fit = 1.0
    for (a, b), r in np.ndenumerate(ratios):
        k = a + b + offset
        if k > 0 and r > 0:
            a_fit = max(a_fit, (r / base) ** (1.0 / k))
    return a_fit, base


def derivative_tables(p, alpha_max, beta_max):
    """All ``d_xi^a d_x^b p`` for ``a <= alpha_max``, ``b <= beta_max``."""
    out = {}
    for b in range(beta_max + 1):
        pb = p.dx(b).table if b else p.table
        for a in range(alpha_max + 1):
            step = np.pi / p.grid.L
            out[a, b] = ladder_derivative(pb, a, step, axis=1) if a else pb
    return out


def estimate_seminorm(p, kind="S", m1=0.0, m2=0.0, mu=None, alpha_max=3, beta_max=3, h=None,
                      xi_mask=None):
    """Scan normalised derivatives of ``p`` against an ``S`` or ``SG`` class bound.

    The ratio at ``(a, b)`` is
    ``|d_xi^a d_x^b p| / ((a! b!)^mu <xi>_h^(m1 - a) <x>^(m2 - b))``
    with the ``x`` factor used only for ``kind == "SG"``.
    """
    if max(alpha_max, beta_max) > MAX_DERIVATIVE_DEPTH:
        raise DepthCapError("scan depth exceeds the derivative-depth cap")
    mu = p.gevrey_mu if mu is None else mu
    h = p.grid.bracket_h if h is None else h
    x = p.grid.x[:, None]
    xi = p.grid.xi[None, :]
    bx = bracket(xi, h)
    jx = bracket(x, 1.0)
    mask = np.ones((p.grid.N, p.grid.N), dtype=bool)
    mask[:, 0] = False  # Nyquist column carries no information
    if xi_mask is not None:
        mask &= xi_mask[None, :]
    tables = derivative_tables(p, alpha_max, beta_max)
    ratios = np.zeros((alpha_max + 1, beta_max + 1))
    where = {}
    finite = True
    for (a, b), d in tables.items():
        den = (factorial(a) * factorial(b)) ** mu * bx ** (m1 - a)
        if kind.upper() == "SG":
            den = den * jx ** (m2 - b)
        r = np.abs(d) / den
        r = np.where(mask, r, 0.0)
        if not np.all(np.isfinite(r)):
            finite = False
            r = np.where(np.isfinite(r), r, np.inf)
        idx = np.unravel_index(np.argmax(r), r.shape)
        ratios[a, b] = r[idx]
        where[a, b] = (float(p.grid.x[idx[0]]), float(p.grid.xi[idx[1]]), a, b)
    a_fit, base = fit_geometric_constant(ratios)
    scaled = {k: ratios[k] / a_fit ** (k[0] + k[1]) for k in where}
    worst = max(scaled, key=scaled.get)
    return SeminormReport(alpha_max, beta_max, float(scaled[worst]), where[worst], float(a_fit),
                          ratios, finite and np.isfinite(a_fit))


def hermitian_split(p):
    """Return ``(H, A)``: Hermitian and anti-Hermitian parts of ``quantize_matrix(p)``."""
    m = quantize_matrix(p)
    mh = m.conj().T
    return (m + mh) / 2.0, (m - mh) / 2.0


def _fourier_frame(grid):
    """Orthonormal basis (columns) of Nyquist-free grid functions."""
    n = grid.N
    e = _dft_phase(n) / np.sqrt(n)
    keep = np.ones(n, dtype=bool)
    keep[grid.nyquist_fft] = False
    return e[:, keep]


def hermitian_floor(matrix, grid):
    """Smallest eigenvalue of the Hermitian part of ``matrix`` on Nyquist-free functions."""
    f = _fourier_frame(grid)
    h = (matrix + matrix.conj().T) / 2.0
    hr = f.conj().T @ h @ f
    return float(np.linalg.eigvalsh((hr + hr.conj().T) / 2.0)[0])


def garding_floor(p):
    """Smallest eigenvalue of the Hermitian part of ``op(p)`` (Nyquist mode excluded)."""
    return hermitian_floor(quantize_matrix(p), p.grid)


def write_symbol_csv(p, path):
    """Write ``p`` as x-major CSV rows ``x, xi, re, im`` after a JSON header line."""
    header = {"L": p.grid.L, "N": p.grid.N, "h": p.grid.bracket_h, "m1": p.xi_order,
              "m2": p.x_order, "mu": p.gevrey_mu}
    x = p.grid.x
    xi = p.grid.xi
    with open(path, "w") as fh:
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        fh.write("x,xi,re,im\n")
        for j in range(p.grid.N):
            for k in range(p.grid.N):
                v = p.table[j, k]
                fh.write(f"{float(x[j])!r},{float(xi[k])!r},{float(v.real)!r},{float(v.imag)!r}\n")


def read_symbol_csv(path):
    """Inverse of :func:`write_symbol_csv`."""
    with open(path) as fh:
        header = json.loads(fh.readline()[1:])
        data = np.loadtxt(fh, delimiter=",", skiprows=1, ndmin=2)
    grid = GridSpec(header["L"], header["N"], header["h"])
    table = (data[:, 2] + 1j * data[:, 3]).reshape(grid.N, grid.N)
    return Symbol(grid, table, xi_order=header["m1"], x_order=header["m2"], gevrey_mu=header["mu"])
