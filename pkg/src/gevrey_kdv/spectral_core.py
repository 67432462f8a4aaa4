"""Periodic Fourier frame, exponential multipliers and Gevrey-Sobolev norms.

The real line is modelled by the torus ``[-L, L)`` sampled at ``N`` points.
Spectral coefficients follow numpy's FFT order and are normalised so that
``u(x_j) = sum_k c_k exp(i xi_k (x_j + L))``; all L2-type integrals use the
trapezoid weight ``2L/N``.
"""
from dataclasses import dataclass, field

import numpy as np


class GridMismatchError(ValueError):
    """Raised when grid functions living on different grids are combined."""


class MultiplierOverflowError(FloatingPointError):
    """Raised when a Fourier multiplier is not representable in float64."""


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid on ``[-L, L)`` with ``N`` points.

    Parameters
    ----------
    L : float
        Half length of the periodic domain.
    N : int
        Number of grid points (even, at least 8).
    bracket_h : float
        Parameter ``h >= 1`` of the weight ``<xi>_h``.
    """

    L: float
    N: int
    bracket_h: float = 1.0

    def __post_init__(self):
        if self.L <= 0:
            raise ValueError("half length L must be positive")
        if int(self.N) != self.N or self.N < 8 or self.N % 2:
            raise ValueError("N must be an even integer >= 8")
        if self.bracket_h < 1:
            raise ValueError("bracket_h must be >= 1")
        object.__setattr__(self, "N", int(self.N))

    @property
    def dx(self):
        return 2.0 * self.L / self.N

    @property
    def x(self):
        """Grid points ``x_j = -L + 2Lj/N``."""
        return -self.L + self.dx * np.arange(self.N)

    @property
    def xi(self):
        """Frequencies ``pi k / L`` for ``k = -N/2 .. N/2-1`` (ascending)."""
        return np.pi / self.L * np.arange(-self.N // 2, self.N // 2)

    @property
    def xi_fft(self):
        """Frequencies in numpy FFT order."""
        return np.pi / self.L * np.fft.fftfreq(self.N, d=1.0 / self.N)

    @property
    def nyquist_fft(self):
        """FFT-order index of the Nyquist mode."""
        return self.N // 2

    def with_h(self, h):
        return GridSpec(self.L, self.N, h)


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Complex samples of a function on a :class:`GridSpec`."""

    grid: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=complex)
        if v.shape != (self.grid.N,):
            raise ValueError(f"expected {self.grid.N} samples, got shape {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid, f):
        return cls(grid, f(grid.x))

    @classmethod
    def from_coeffs(cls, grid, coeffs):
        """Build from FFT-order coefficients normalised as ``fft(u) / N``."""
        return cls(grid, np.fft.ifft(np.asarray(coeffs) * grid.N))

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.N, dtype=complex))

    def coeffs(self):
        return np.fft.fft(self.values) / self.grid.N

    def _check(self, other):
        if other.grid != self.grid:
            raise GridMismatchError("grid functions live on different grids")

    def __add__(self, other):
        if isinstance(other, GridFunction):
            self._check(other)
            return GridFunction(self.grid, self.values + other.values)
        return GridFunction(self.grid, self.values + other)

    def __sub__(self, other):
        if isinstance(other, GridFunction):
            self._check(other)
            return GridFunction(self.grid, self.values - other.values)
        return GridFunction(self.grid, self.values - other)

    def __mul__(self, other):
        if isinstance(other, GridFunction):
            self._check(other)
            return GridFunction(self.grid, self.values * other.values)
        return GridFunction(self.grid, self.values * other)

    __rmul__ = __mul__
    __radd__ = __add__

    def __neg__(self):
        return GridFunction(self.grid, -self.values)

    def conj(self):
        return GridFunction(self.grid, self.values.conj())

    def l2_norm(self):
        """Trapezoid L2 norm in physical space."""
        return float(np.sqrt(self.grid.dx * np.sum(np.abs(self.values) ** 2)))


@dataclass(frozen=True)
class GevreyIndex:
    """Index ``(m, rho, theta)`` of the norm ``||<D>^m exp(rho <D>^(1/theta)) u||``."""

    m: float = 0.0
    rho: float = 0.0
    theta: float = 2.0

    def __post_init__(self):
        if self.theta <= 1:
            raise ValueError("Gevrey index theta must exceed 1")
        if self.rho < 0:
            raise ValueError("radius rho must be nonnegative")

    def weight(self, xi, h=1.0):
        b = bracket(xi, h)
        with np.errstate(over="ignore"):
            w = b ** self.m * np.exp(self.rho * b ** (1.0 / self.theta))
        if not np.all(np.isfinite(w)):
            raise MultiplierOverflowError(
                f"Gevrey weight overflows for rho={self.rho}, theta={self.theta}"
            )
        return w


def bracket(xi, h=1.0):
    """Return ``<xi>_h = (h^2 + xi^2)^(1/2)``."""
    return np.sqrt(h * h + np.square(xi))


def _multiplier_values(m, grid):
    xi = grid.xi_fft
    with np.errstate(over="ignore", invalid="ignore"):
        vals = m(xi) if callable(m) else np.broadcast_to(np.asarray(m), xi.shape)
        vals = np.array(np.broadcast_to(vals, xi.shape), dtype=complex)
    vals[grid.nyquist_fft] = 0.0
    if not np.all(np.isfinite(vals)):
        raise MultiplierOverflowError("multiplier is not representable on this grid")
    return vals


def fourier_multiplier(m, u):
    """Apply the Fourier multiplier ``m(D)`` to ``u``; the Nyquist mode is zeroed.

    Parameters
    ----------
    m : callable or array_like
        Function of the frequency array (FFT order), or its precomputed values.
    u : GridFunction
    """
    vals = _multiplier_values(m, u.grid)
    return GridFunction(u.grid, np.fft.ifft(np.fft.fft(u.values) * vals))


def gevrey_weights(grid, idx, h=1.0):
    """Weights ``<xi>^m exp(rho <xi>^(1/theta))`` in FFT order, Nyquist set to 0."""
    w = idx.weight(grid.xi_fft, h).astype(float)
    w[grid.nyquist_fft] = 0.0
    return w


def gevrey_norm(u, idx, h=1.0):
    """Discrete ``H^m_{rho;theta}`` norm with trapezoid weight ``2L/N``."""
    w = gevrey_weights(u.grid, idx, h)
    c = u.coeffs()
    return float(np.sqrt(2.0 * u.grid.L * np.sum((w * np.abs(c)) ** 2)))


def gevrey_inner(u, v, idx, h=1.0):
    """Inner product ``<W u, W v>_{L2}``, linear in ``u`` and antilinear in ``v``."""
    u._check(v)
    w = gevrey_weights(u.grid, idx, h)
    return complex(2.0 * u.grid.L * np.sum(w * w * u.coeffs() * v.coeffs().conj()))


def band_index(grid, theta):
    """Band ``j >= 1`` with ``j^theta <= <xi> < (j+1)^theta`` for every FFT mode."""
    b = bracket(grid.xi_fft, 1.0)
    j = np.floor(b ** (1.0 / theta)).astype(int)
    # guard against rounding at exact band edges
    j = np.where((j + 1) ** theta <= b, j + 1, j)
    j = np.where(j ** theta > b, j - 1, j)
    return np.maximum(j, 1)


def tame_decompose(u, theta):
    """Split ``u`` into spectral bands ``j^theta <= <xi> < (j+1)^theta``.

    Returns a list whose entry ``j-1`` holds band ``j``; the Nyquist mode is
    dropped, matching every other multiplier.
    """
    if theta <= 1:
        raise ValueError("theta must exceed 1")
    grid = u.grid
    j = band_index(grid, theta)
    c = u.coeffs()
    c[grid.nyquist_fft] = 0.0
    pieces = []
    for band in range(1, int(j.max()) + 1):
        pieces.append(GridFunction.from_coeffs(grid, np.where(j == band, c, 0.0)))
    return pieces


def tame_reassemble(pieces, theta, grid=None):
    """Left inverse of :func:`tame_decompose`: sum the band-restricted pieces."""
    pieces = list(pieces)
    if not pieces:
        if grid is None:
            raise ValueError("a grid is required to reassemble an empty sequence")
        return GridFunction.zeros(grid)
    grid = pieces[0].grid
    j = band_index(grid, theta)
    total = np.zeros(grid.N, dtype=complex)
    for band, piece in enumerate(pieces, start=1):
        if piece.grid != grid:
            raise GridMismatchError("pieces live on different grids")
        total += np.where(j == band, piece.coeffs(), 0.0)
    return GridFunction.from_coeffs(grid, total)


def grading_seminorm(u, k, theta):
    """Grading seminorm ``|u|_k = ||exp(k <D>^(1/theta)) u||``."""
    return gevrey_norm(u, GevreyIndex(0.0, float(k), theta))


def sequence_seminorm(pieces, k):
    """Seminorm ``(sum_j exp(2jk) ||f_j||^2)^(1/2)`` on band sequences (j from 1)."""
    total = 0.0
    for j, piece in enumerate(pieces, start=1):
        total += np.exp(2.0 * j * k) * piece.l2_norm() ** 2
    return float(np.sqrt(total))


def tameness_scan(grid, theta, k_values=(1, 2, 3), n_samples=50, seed=0):
    """Largest observed ratio ``|L1 u|_k / |u|_{k+1}`` over random ``u``.

    Returns a dict mapping each ``k`` to the maximum ratio over the samples.
    """
    rng = np.random.default_rng(seed)
    out = {}
    for k in k_values:
        worst = 0.0
        for _ in range(n_samples):
            c = rng.standard_normal(grid.N) + 1j * rng.standard_normal(grid.N)
            c *= np.exp(-bracket(grid.xi_fft) ** (1.0 / theta) * (k + 2))
            u = GridFunction.from_coeffs(grid, c)
            num = sequence_seminorm(tame_decompose(u, theta), k)
            den = grading_seminorm(u, k + 1, theta)
            worst = max(worst, num / den)
        out[k] = worst
    return out
