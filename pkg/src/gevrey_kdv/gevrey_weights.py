"""Infinite-order weights for the change of variables and its inverse.

The weights are

* ``lambda2(x, xi) = M2 w(xi/h) int_0^x <y>^-sigma psi(<y>/<xi>_h^2) dy``
* ``lambda1(x, xi) = M1 w(xi/h) <xi>_h^-1 int_0^x <y>^(-sigma/2) psi(<y>/<xi>_h^2) dy``
* ``Lambda(t, xi) = rho' <xi>_h^(1/theta) + k (T - t) <xi>_h^(2(1-sigma))``

and the change of variables is ``Q = exp(Lambda)(t, D) o exp(lambda2 + lambda1)(x, D)``.

On the real line ``lambda2`` is odd and monotone in ``x``, so it cannot be
periodic.  Two realisations are provided: the exact weight (pointwise, used for
estimates and lower bounds) and a periodised weight for the torus, equal to the
exact one on ``|x| <= 0.15 L``, whose integrand is windowed and compensated by a
wide lobe around ``x = +-L`` so that the weight returns to zero at the boundary.

The periodised weight is also tapered to zero near the largest grid
frequencies (:func:`frequency_taper`), so ``exp(lambda~)(x, D)`` acts as the
identity where frequency shifts would wrap around the discrete spectrum.
Dense operators act on Nyquist-free grid functions.
"""
from dataclasses import dataclass, field, replace
from functools import lru_cache
from math import factorial

import numpy as np
from scipy import integrate, special

from .fd import ladder_derivative
from .jets import Jet, bracket_jet
from .psdo_calculus import (
    Symbol,
    SeminormReport,
    admissible_projector,
    fit_geometric_constant,
    multiplier_matrix,
    quantize_matrix,
    reverse_quantize_matrix,
)
from .spectral_core import GridFunction, GridSpec, MultiplierOverflowError, bracket

QUAD_TOL = 1e-10
_EXP_CLIP = 600.0
TORUS_PROFILES = ("analytic", "gevrey")


class InversionDivergenceError(RuntimeError):
    """Raised when the measured norm of ``r`` is not below 1."""


class QuadratureError(RuntimeError):
    """Raised when adaptive quadrature misses its tolerance."""


@dataclass(frozen=True)
class WeightParams:
    """Parameters of the weights.

    ``mu`` defaults to ``(1 + theta) / 2``.  Zero values of ``M2``, ``M1``,
    ``k`` and ``rho_prime`` are accepted so that the weight can be switched off.
    """

    sigma: float = 0.75
    theta: float = 1.6
    mu: float = None
    M2: float = 1.0
    M1: float = 1.0
    k: float = 1.0
    h: float = 1.0
    rho_prime: float = 0.5
    T: float = 1.0
    torus_window: str = "analytic"

    def __post_init__(self):
        if self.mu is None:
            object.__setattr__(self, "mu", 0.5 * (1.0 + self.theta))
        if not 0.5 < self.sigma < 1.0:
            raise ValueError("sigma must lie in (1/2, 1)")
        if not self.theta < 1.0 / (2.0 * (1.0 - self.sigma)):
            raise ValueError("theta must be below 1/(2(1-sigma))")
        if not 1.0 < self.mu < self.theta:
            raise ValueError("mu must lie in (1, theta)")
        if min(self.M2, self.M1, self.k, self.rho_prime) < 0:
            raise ValueError("M2, M1, k and rho_prime must be nonnegative")
        if self.h < 1:
            raise ValueError("h must be >= 1")
        if self.T <= 0:
            raise ValueError("T must be positive")
        if self.torus_window not in TORUS_PROFILES:
            raise ValueError(f"torus_window must be one of {TORUS_PROFILES}")

    def with_(self, **kw):
        return replace(self, **kw)


# ---------------------------------------------------------------------------
# Gevrey cutoffs


def _step_scale(mu):
    p = 1.0 / (mu - 1.0)
    # chosen so that the step has unit slope at s = 1/2
    return p, 1.0 / (p * 2.0 ** p)


def gevrey_step(s, mu):
    """Gevrey-``mu`` step: 0 for ``s <= 0``, 1 for ``s >= 1``, smooth in between."""
    s = np.asarray(s, dtype=float)
    p, c = _step_scale(mu)
    inside = (s > 0) & (s < 1)
    si = np.where(inside, s, 0.5)
    with np.errstate(over="ignore"):
        phi = c * (si ** -p - (1.0 - si) ** -p)
        val = special.expit(-phi)
    return np.where(inside, val, np.where(s >= 1, 1.0, 0.0))


def gevrey_step_jet(s, mu):
    """Jet of :func:`gevrey_step` composed with the jet ``s``."""
    p, c = _step_scale(mu)
    s0 = s.value
    inside = (s0 > 0) & (s0 < 1)
    safe = s.where(inside, 0.5)
    phi = ((safe ** -p) - ((1.0 - safe) ** -p)) * c
    phi0 = phi.value
    live = inside & (np.abs(phi0) < _EXP_CLIP)
    phi = phi.where(live, 0.0)
    val = (phi.exp() + 1.0).reciprocal()
    const = np.where(s0 >= 1, 1.0, 0.0)
    const = np.where(inside & (phi0 <= -_EXP_CLIP), 1.0, const)
    return val.where(live, Jet.constant(const, s.order, s0.shape))


@dataclass(frozen=True)
class CutoffPair:
    """Cutoffs ``w`` (frequency) and ``psi`` (space) of Gevrey order ``mu``.

    ``w(xi) = 0`` for ``|xi| <= 1`` and ``-sgn(a3)`` for ``|xi| >= 2``;
    ``psi(y) = 1`` for ``|y| <= 1/2`` and ``0`` for ``|y| >= 1``.
    """

    mu: float
    sign_a3: float = 1.0

    def w(self, xi):
        return -np.sign(self.sign_a3) * gevrey_step(np.abs(xi) - 1.0, self.mu)

    def psi(self, y):
        return 1.0 - gevrey_step(2.0 * np.abs(y) - 1.0, self.mu)

    def w_jet(self, xi, order):
        t = Jet.variable(np.abs(xi), order)
        sgn = np.where(np.asarray(xi) < 0, -1.0, 1.0)
        j = gevrey_step_jet(t - 1.0, self.mu) * (-np.sign(self.sign_a3))
        # d/dxi of f(|xi|) picks up sign(xi)^n
        return Jet(j.c * sgn[None] ** np.arange(order + 1).reshape((-1,) + (1,) * np.ndim(xi)))

    def psi_jet(self, yjet):
        """Jet of ``psi`` composed with a jet whose values are nonnegative."""
        return 1.0 - gevrey_step_jet(yjet * 2.0 - 1.0, self.mu)

    def derivative_constant(self, which="psi", order=8, samples=4001):
        """Smallest ``C`` with ``|f^(b)| <= C^(b+1) b!^mu`` for ``b <= order`` on a fine scan."""
        if which == "psi":
            y = np.linspace(0.0, 1.2, samples)
            jet = self.psi_jet(Jet.variable(y, order))
        else:
            y = np.linspace(0.0, 2.5, samples)
            jet = self.w_jet(y, order)
        ratios = np.array([np.max(np.abs(jet.derivative(b))) / factorial(b) ** self.mu
                           for b in range(order + 1)])
        c_fit = max(r ** (1.0 / (b + 1)) for b, r in enumerate(ratios))
        return c_fit, ratios


# ---------------------------------------------------------------------------
# exact weights on the real line


def _exponent(which, sigma):
    return sigma if which == "lambda2" else sigma / 2.0


def bracket_power_integral(z, s):
    """``int_0^z <y>^-s dy`` in closed form (odd in ``z``)."""
    z = np.asarray(z, dtype=float)
    return z * special.hyp2f1(0.5, s / 2.0, 1.5, -z * z)


def _quad_vec(f, n):
    if n == 0:
        return np.zeros(0)
    val, err = integrate.quad_vec(f, 0.0, 1.0, epsabs=QUAD_TOL, epsrel=0.0, norm="max", limit=400)
    if not err <= 10 * QUAD_TOL:
        raise QuadratureError(f"quadrature error estimate {err:.2e} exceeds tolerance")
    return val


def cutoff_integral(x, s, R, mu):
    """``int_0^x <y>^-s psi(<y>/R) dy`` on the real line, broadcast over ``x`` and ``R``."""
    x, R = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(R, dtype=float))
    ax = np.abs(x)
    ya = np.sqrt(np.maximum((R / 2.0) ** 2 - 1.0, 0.0))
    yb = np.sqrt(np.maximum(R ** 2 - 1.0, 0.0))
    out = bracket_power_integral(np.minimum(ax, ya), s)
    need = (ax > ya) & (yb > ya)
    lo = ya[need]
    hi = np.minimum(ax[need], yb[need])
    Rn = R[need]
    cut = CutoffPair(mu)

    def f(t):
        y = lo + t * (hi - lo)
        return bracket(y) ** -s * cut.psi(bracket(y) / Rn) * (hi - lo)

    out = out.copy()
    out[need] += _quad_vec(f, int(need.sum()))
    return np.sign(x) * out


def _lambda_factor(which, xi, params, sign_a3):
    cut = CutoffPair(params.mu, sign_a3)
    w = cut.w(np.asarray(xi, dtype=float) / params.h)
    bh = bracket(xi, params.h)
    if which == "lambda2":
        return params.M2 * w
    return params.M1 * w / bh


def _lambda(which, x, xi, sign_a3, params):
    x, xi = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(xi, dtype=float))
    fac = _lambda_factor(which, xi, params, sign_a3)
    out = np.zeros(x.shape)
    live = fac != 0
    if np.any(live):
        R = bracket(xi[live], params.h) ** 2
        out[live] = fac[live] * cutoff_integral(x[live], _exponent(which, params.sigma), R, params.mu)
    return out if out.ndim else float(out)


def lambda2(x, xi, sign_a3, params):
    """Exact ``lambda2`` on the real line (broadcast over ``x`` and ``xi``)."""
    return _lambda("lambda2", x, xi, sign_a3, params)


def lambda1(x, xi, sign_a3, params):
    """Exact ``lambda1`` on the real line (broadcast over ``x`` and ``xi``)."""
    return _lambda("lambda1", x, xi, sign_a3, params)


def integrand_jet(which, x, xi, params, order):
    """Jet in ``x`` of the integrand ``<x>^-s psi(<x>/<xi>_h^2)``."""
    s = _exponent(which, params.sigma)
    bx = bracket_jet(x, order)
    R = bracket(xi, params.h) ** 2
    cut = CutoffPair(params.mu)
    return (bx ** -s) * cut.psi_jet(bx / R)


def lambda_x_derivatives(which, x, xi, sign_a3, params, order):
    """Array ``[lam, d_x lam, ..., d_x^order lam]`` of the exact weight."""
    x, xi = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(xi, dtype=float))
    fac = _lambda_factor(which, xi, params, sign_a3)
    out = np.zeros((order + 1,) + x.shape)
    out[0] = _lambda(which, x, xi, sign_a3, params)
    if order >= 1:
        jet = integrand_jet(which, x, xi, params, order - 1)
        for b in range(1, order + 1):
            out[b] = fac * jet.derivative(b - 1)
    return out


def capital_lambda(t, xi, params):
    """``Lambda(t, xi) = rho' <xi>_h^(1/theta) + k (T - t) <xi>_h^(2(1-sigma))``."""
    bh = bracket(xi, params.h)
    return params.rho_prime * bh ** (1.0 / params.theta) + params.k * (params.T - t) * bh ** (2.0 * (1.0 - params.sigma))


# ---------------------------------------------------------------------------
# periodised weights on the torus


@dataclass(frozen=True)
class TorusWindow:
    """Window ``E`` and boundary lobe ``B`` used to periodise the weight.

    ``profile="gevrey"``: ``E`` is 1 on ``|y| <= a`` and 0 beyond ``b``, ``B``
    equals 1 within ``c0`` of ``+-L`` and vanishes farther than ``c1``, with
    ``b = L - c1`` so the supports only touch; the weight is then exact on
    ``|y| <= a``.  ``profile="analytic"``: ``E = cos^2(pi y / 2L)`` and
    ``B = 1 - E``; nothing is exact, but all x-derivatives stay of size
    ``(pi / 2L)^n``, which keeps the symbol calculus accurate on coarse grids.
    """

    L: float
    mu: float
    a_frac: float = 0.15
    c0_frac: float = 0.3
    c1_frac: float = 0.6
    profile: str = "gevrey"

    @property
    def analytic(self):
        return self.profile == "analytic"

    @property
    def a(self):
        return 0.0 if self.analytic else self.a_frac * self.L

    @property
    def b(self):
        return self.L if self.analytic else self.L - self.c1

    @property
    def c0(self):
        return self.c0_frac * self.L

    @property
    def c1(self):
        return self.c1_frac * self.L

    def E(self, y):
        if self.analytic:
            return np.cos(0.5 * np.pi * np.asarray(y) / self.L) ** 2
        return 1.0 - gevrey_step((np.abs(y) - self.a) / (self.b - self.a), self.mu)

    def B(self, y):
        if self.analytic:
            return np.sin(0.5 * np.pi * np.asarray(y) / self.L) ** 2
        d = self.L - np.abs(y)
        return 1.0 - gevrey_step((d - self.c0) / (self.c1 - self.c0), self.mu)

    def B_mass(self):
        """``int_0^L B``; both profiles have mean 1/2 across their transition."""
        if self.analytic:
            return 0.5 * self.L
        return self.c0 + 0.5 * (self.c1 - self.c0)

    def _cos_jet(self, y, order):
        # cos(pi y / L) and its derivatives by phase shifts
        w = np.pi / self.L
        th = w * np.asarray(y, dtype=float)
        return Jet(np.array([np.cos(th + n * np.pi / 2) * w ** n / factorial(n) for n in range(order + 1)]))

    def E_jet(self, y, order):
        if self.analytic:
            return (self._cos_jet(y, order) + 1.0) * 0.5
        t = Jet.variable(np.abs(y), order)
        j = 1.0 - gevrey_step_jet((t - self.a) * (1.0 / (self.b - self.a)), self.mu)
        return _even_jet(j, y)

    def B_jet(self, y, order):
        if self.analytic:
            return 1.0 - self.E_jet(y, order)
        t = Jet.variable(np.abs(y), order)
        j = 1.0 - gevrey_step_jet(((self.L - t) - self.c0) * (1.0 / (self.c1 - self.c0)), self.mu)
        return _even_jet(j, y)


def _even_jet(jet_in_abs, y):
    """Convert a jet in ``|y|`` into a jet in ``y`` for an even function."""
    sgn = np.where(np.asarray(y) < 0, -1.0, 1.0)
    n = np.arange(jet_in_abs.order + 1).reshape((-1,) + (1,) * np.ndim(y))
    return Jet(jet_in_abs.c * sgn[None] ** n)


def _interval_integrals(f, lo, hi, n):
    """Integrals of a vectorised integrand over many intervals at once."""

    def g(t):
        return f(lo + t * (hi - lo)) * (hi - lo)

    return _quad_vec(g, n)


def periodized_integral_table(grid, which, params):
    """Cumulative periodised integral ``I(x_j, xi_k)`` for every live column.

    Returns ``(I, live)`` where ``I`` has shape ``(N, N)`` (ascending xi) and
    ``live`` marks the columns where the cutoff factor is nonzero.
    """
    s = _exponent(which, params.sigma)
    win = TorusWindow(grid.L, params.mu, profile=params.torus_window)
    x = grid.x
    xi = grid.xi
    fac = _lambda_factor(which, xi, params, 1.0)
    live = fac != 0
    out = np.zeros((grid.N, grid.N))
    if not np.any(live):
        return out, live
    R = bracket(xi[live], params.h) ** 2
    cut = CutoffPair(params.mu)
    half = grid.N // 2
    xr = x[half:]                      # 0 = x_{N/2} <= ... <= L - dx
    nodes = np.append(xr, grid.L)
    lo = np.repeat(nodes[:-1, None], R.size, axis=1)
    hi = np.repeat(nodes[1:, None], R.size, axis=1)
    Rb = np.broadcast_to(R[None, :], lo.shape)

    def gE(y):
        by = bracket(y)
        return by ** -s * cut.psi(by / Rb) * win.E(y)

    pieces = _interval_integrals(gE, lo, hi, lo.size).reshape(lo.shape)
    cum = np.vstack([np.zeros((1, R.size)), np.cumsum(pieces, axis=0)])
    mass = cum[-1]                      # int_0^L g E for each column
    bl = _interval_integrals(win.B, nodes[:-1], nodes[1:], nodes.size - 1)
    bcum = np.append(0.0, np.cumsum(bl)) / win.B_mass()
    right = cum - bcum[:, None] * mass[None, :]
    tab = np.zeros((grid.N, R.size))
    tab[half:] = right[:-1]
    # odd extension: x_{N/2 - m} = -x_{N/2 + m}; x_0 = -L maps to the boundary value 0
    tab[1:half] = -right[1:half][::-1]
    tab[0] = -right[-1]
    out[:, live] = tab
    return out, live


def periodized_integrand_jet(which, x, xi, params, L, order):
    """Jet in ``x`` of the periodised integrand ``g E - (m / |B|) B``."""
    s = _exponent(which, params.sigma)
    win = TorusWindow(L, params.mu, profile=params.torus_window)
    g = integrand_jet(which, x, xi, params, order)
    xi = np.asarray(xi, dtype=float)
    cut = CutoffPair(params.mu)
    # mass m(xi) = int_0^L g E, once per distinct frequency
    uxi, inv = np.unique(xi, return_inverse=True)
    R = bracket(uxi, params.h) ** 2

    def gE(y):
        by = bracket(y)
        return by ** -s * cut.psi(by / R) * win.E(y)

    mass = _interval_integrals(gE, np.zeros_like(R), np.full_like(R, win.b), R.size)
    m = mass[inv].reshape(xi.shape)
    return g * win.E_jet(x, order) - win.B_jet(x, order) * (m / win.B_mass())


TAPER_START = 0.5
TAPER_END = 0.85


def frequency_taper(grid, mu):
    """Gevrey taper in ``xi``: 1 below ``TAPER_START * max|xi|``, 0 beyond ``TAPER_END * max|xi|``."""
    top = np.pi * grid.N / (2.0 * grid.L)
    return 1.0 - gevrey_step((np.abs(grid.xi) / top - TAPER_START) / (TAPER_END - TAPER_START), mu)


@dataclass
class WeightTable:
    """Tabulated weight on a grid with its x-derivatives.

    ``values[b]`` is ``d_x^b`` of the weight for ``b = 0 .. x_order``; rows are
    grid points and columns ascending frequencies.
    """

    grid: GridSpec
    params: WeightParams
    sign_a3: float
    periodic: bool
    values: np.ndarray = field(repr=False)

    @property
    def table(self):
        return self.values[0]

    def symbol(self, b=0):
        return Symbol(self.grid, self.values[b], gevrey_mu=self.params.mu)


def weight_table(grid, params, sign_a3, which="both", periodic=True, x_order=4):
    """Tabulate ``lambda2``, ``lambda1`` or their sum on the grid.

    With ``periodic=True`` the torus realisation is used (periodised in ``x``,
    tapered near the largest frequencies); otherwise the exact real-line weight
    is sampled at the grid points.
    """
    key = (grid, params, float(np.sign(sign_a3)), which, bool(periodic), int(x_order))
    return _weight_table_cached(*key)


@lru_cache(maxsize=32)
def _weight_table_cached(grid, params, sign, which, periodic, x_order):
    names = ("lambda2", "lambda1") if which == "both" else (which,)
    x = grid.x[:, None]
    xi = grid.xi[None, :]
    total = np.zeros((x_order + 1, grid.N, grid.N))
    for name in names:
        fac = _lambda_factor(name, grid.xi, params, sign)
        live = fac != 0
        if not np.any(live):
            continue
        if periodic:
            integral, _ = periodized_integral_table(grid, name, params)
            total[0] += fac[None, :] * integral
            if x_order >= 1:
                jet = periodized_integrand_jet(name, np.repeat(x, live.sum(), axis=1),
                                               np.repeat(xi[:, live], grid.N, axis=0),
                                               params, grid.L, x_order - 1)
                for b in range(1, x_order + 1):
                    total[b][:, live] += fac[None, live] * jet.derivative(b - 1)
        else:
            vals = lambda_x_derivatives(name, np.repeat(x, live.sum(), axis=1),
                                        np.repeat(xi[:, live], grid.N, axis=0),
                                        sign, params, x_order)
            total[:, :, live] += vals
    if periodic:
        total *= frequency_taper(grid, params.mu)[None, None, :]
    total.setflags(write=False)
    return WeightTable(grid, params, sign, periodic, total)


# ---------------------------------------------------------------------------
# derivative estimates of lambda2 / lambda1


@dataclass
class LambdaEstimateReport:
    """Scan of one weight against its part (i), part (ii) and order-zero bounds."""

    which: str
    part_i: SeminormReport
    part_ii: SeminormReport
    order_zero: SeminormReport

    @property
    def passed(self):
        return all(r.finite and np.isfinite(r.fitted_A) for r in (self.part_i, self.part_ii, self.order_zero))


def _scan_grid(params, n_x=48, xi_cells=16, xi_span=64):
    h = params.h
    dxi = h / xi_cells
    xi = dxi * np.arange(-xi_span * xi_cells, xi_span * xi_cells + 1)
    rmax = bracket(xi[-1], h) ** 2
    x = np.concatenate([[0.0], np.geomspace(1e-2, 10.0 * rmax, n_x - 1)])
    return x, xi, dxi


def _bound_report(ratios, where, offset):
    c_fit, _ = fit_geometric_constant(ratios, offset=offset, base=1.0)
    scaled = {k: ratios[k] / c_fit ** (k[0] + k[1] + offset) for k in where}
    worst = max(scaled, key=scaled.get) if scaled else (0, 0)
    finite = bool(np.all(np.isfinite(ratios)))
    return SeminormReport(ratios.shape[0] - 1, ratios.shape[1] - 1,
                          float(scaled.get(worst, 0.0)), where.get(worst, (0.0, 0.0, 0, 0)),
                          float(c_fit), ratios, finite)


def verify_lambda_estimates(which, params, alpha_max=3, beta_max=3, sign_a3=1.0, scan=None):
    """Check the derivative bounds of ``lambda2`` / ``lambda1`` on a scan grid.

    The scan uses ``x >= 0`` (the weights are odd in ``x``) on a geometric
    ladder reaching ten times the largest ``<xi>_h^2`` and a uniform ``xi``
    ladder of step ``h/16`` up to ``64 h``.  The fitted constant ``C`` is the
    smallest with ``ratio <= C^(a+b+1)``, where ``ratio`` is the derivative
    divided by ``M a!^mu b!^mu`` times the bound's weight factor.
    """
    if max(alpha_max, beta_max) > 4:
        raise ValueError("scan depth is limited to 4")
    x, xi, dxi = _scan_grid(params) if scan is None else scan
    X, XI = np.meshgrid(x, xi, indexing="ij")
    vals = lambda_x_derivatives(which, X, XI, sign_a3, params, beta_max)
    bh = bracket(XI, params.h)
    bx = bracket(X)
    sig = params.sigma
    mu = params.mu
    M = params.M2 if which == "lambda2" else params.M1
    scale = M if M > 0 else 1.0
    mask = np.abs(XI) < xi[-1] + 1.0
    ratios = {name: np.zeros((alpha_max + 1, beta_max + 1)) for name in ("i", "ii", "zero")}
    where = {name: {} for name in ratios}
    for b in range(beta_max + 1):
        for a in range(alpha_max + 1):
            d = ladder_derivative(vals[b], a, dxi, axis=1) if a else vals[b]
            fact = factorial(a) ** mu * factorial(b) ** mu
            if b == 0:
                if which == "lambda2":
                    weight = np.minimum(bh ** (2 * (1 - sig)), bx ** (1 - sig))
                else:
                    weight = np.minimum.reduce([bh ** (1 - sig), bx ** (1 - sig / 2) / bh,
                                                bx ** (0.5 - sig / 2)])
                den = scale * fact * bh ** -a * weight
                parts = (("i", den),)
            else:
                if which == "lambda2":
                    weight = bx ** (-sig - b + 1)
                else:
                    weight = bx ** (-sig / 2 - b + 1) * np.minimum(1 / bh, bx ** (-sig / 2))
                parts = (("ii", scale * fact * bh ** -a * weight), ("zero", fact * bh ** -a))
            for name, den in parts:
                r = np.where(mask, np.abs(d) / den, 0.0)
                idx = np.unravel_index(np.argmax(r), r.shape)
                ratios[name][a, b] = r[idx]
                where[name][a, b] = (float(X[idx]), float(XI[idx]), a, b)
    return LambdaEstimateReport(
        which,
        _bound_report(ratios["i"][:, :1], {k: v for k, v in where["i"].items() if k[1] == 0}, 1),
        _bound_report(ratios["ii"], {k: v for k, v in where["ii"].items() if k[1] >= 1}, 1),
        _bound_report(ratios["zero"], {k: v for k, v in where["zero"].items() if k[1] >= 1}, 1),
    )


# ---------------------------------------------------------------------------
# the operator exp(lambda~)(x, D) and its inverse


def e_lambda_symbols(grid, params, sign_a3):
    """Symbols ``exp(+lambda~)`` and ``exp(-lambda~)`` of the periodised weight."""
    lam = weight_table(grid, params, sign_a3, "both", periodic=True, x_order=0).table
    return (Symbol(grid, np.exp(lam), gevrey_mu=params.mu),
            Symbol(grid, np.exp(-lam), gevrey_mu=params.mu))


def _op_norm(m):
    return float(np.linalg.norm(m, 2))


@dataclass
class EInverse:
    """Inverse of ``exp(lambda~)(x, D)``: ``R(exp(-lambda~)) o sum_j (-r)^j``.

    ``forward``, ``reverse`` and ``r`` are the Nyquist-free matrices of
    ``exp(lambda~)(x, D)``, ``R(exp(-lambda~))`` and ``forward @ reverse - P``.
    ``residual`` is the left-inverse residual ``||matrix @ forward - P||``.
    """

    grid: GridSpec
    matrix: np.ndarray = field(repr=False)
    r_norm: float
    n_terms: int
    residual: float
    forward: np.ndarray = field(repr=False)
    reverse: np.ndarray = field(repr=False)
    r: np.ndarray = field(repr=False)

    def apply(self, u):
        return GridFunction(self.grid, self.matrix @ u.values)


def inverse_residual_matrix(grid, params, sign_a3):
    """Nyquist-free ``E = exp(lambda~)(x, D)``, ``R = R(exp(-lambda~))`` and ``r = E R - P``."""
    ep, em = e_lambda_symbols(grid, params, sign_a3)
    P = admissible_projector(grid)
    E = P @ quantize_matrix(ep) @ P
    Rm = P @ reverse_quantize_matrix(em) @ P
    return E, Rm, E @ Rm - P


def neumann_inverse(Rm, r, P, max_terms=60, tol=1e-10):
    """``Rm sum_j (-r)^j``, truncated once a term drops below ``tol``; returns ``(inverse, n_terms)``."""
    series = P.copy()
    term = P.copy()
    n = 1
    while n < max_terms:
        term = -r @ term
        if np.linalg.norm(term, 2) < tol:
            break
        series = series + term
        n += 1
    return Rm @ series, n


def invert_e_lambda(grid, params, sign_a3, max_terms=60, tol=1e-10):
    """Invert ``exp(lambda~)(x, D)`` via the right quantization and a Neumann series.

    Raises :class:`InversionDivergenceError` when ``||r|| >= 1``.
    """
    E, Rm, r = inverse_residual_matrix(grid, params, sign_a3)
    rn = _op_norm(r)
    if rn >= 1.0:
        raise InversionDivergenceError(f"||r|| = {rn:.3f} >= 1; raise h")
    P = admissible_projector(grid)
    inv, n = neumann_inverse(Rm, r, P, max_terms, tol)
    return EInverse(grid, inv, rn, n, _op_norm(inv @ E - P), E, Rm, r)


def h_sweep(grid, params, sign_a3, hs=(1, 2, 4, 8, 16, 32, 64), target=0.5):
    """Measured ``||r||`` for each ``h``; returns ``(h0, [(h, ||r||), ...])``."""
    rows = []
    h0 = None
    for h in hs:
        rn = _op_norm(inverse_residual_matrix(grid, params.with_(h=float(h)), sign_a3)[2])
        rows.append((float(h), rn))
        if h0 is None and rn < target:
            h0 = float(h)
    return h0, rows


@dataclass
class InverseTermReport:
    """Residuals of truncated inverses of ``exp(lambda~)(x, D)``.

    ``neumann`` holds ``||E R S_n - P||`` for ``n = 1, 2`` Neumann terms
    (``S_1 = P``, ``S_2 = P - r``); ``symbolic`` holds ``||E R op(c) - P||``
    for the corrections ``c = 1 - i d_xi d_x L`` and
    ``c = 1 - i d_xi d_x L - (1/2) d_xi^2 (d_x^2 L - (d_x L)^2) - (d_xi d_x L)^2``.
    ``leading_mismatch`` is ``||r - op(i d_xi d_x L)|| / ||r||``.
    """

    r_norm: float
    neumann: tuple
    symbolic: tuple
    leading_mismatch: float

    @property
    def neumann_factor(self):
        return self.neumann[0] / self.neumann[1]

    @property
    def symbolic_factor(self):
        return self.r_norm / self.symbolic[0]


def inverse_term_report(grid, params, sign_a3):
    """Compare one and two Neumann terms with the symbolic first-order inverse."""
    tab = weight_table(grid, params, sign_a3, "both", periodic=True, x_order=2)
    lx = tab.symbol(1)
    lxx = tab.symbol(2)
    dxi_lx = lx.dxi(1)
    first = 1.0 - 1j * dxi_lx
    second = first - 0.5 * (lxx - lx * lx).dxi(2) - dxi_lx * dxi_lx
    E, Rm, r = inverse_residual_matrix(grid, params, sign_a3)
    P = admissible_projector(grid)
    rn = _op_norm(r)
    two = _op_norm(E @ Rm @ (P - r) - P)
    sym = tuple(_op_norm(E @ Rm @ (P @ quantize_matrix(c) @ P) - P) for c in (first, second))
    lead = P @ quantize_matrix(1j * dxi_lx) @ P
    mismatch = _op_norm(r - lead) / rn if rn > 0 else 0.0
    return InverseTermReport(rn, (rn, two), sym, mismatch)


def capital_lambda_multiplier(grid, t, params, sign=1.0):
    """FFT-order values of ``exp(sign * Lambda(t, xi))`` (Nyquist set to 0)."""
    with np.errstate(over="ignore"):
        v = np.exp(sign * capital_lambda(t, grid.xi_fft, params))
    if not np.all(np.isfinite(v)):
        raise MultiplierOverflowError("exp(Lambda) overflows on this grid")
    v[grid.nyquist_fft] = 0.0
    return v


@dataclass
class QOperator:
    """The change of variables at time ``t`` with dense realisations."""

    grid: GridSpec
    t: float
    params: WeightParams
    forward: np.ndarray = field(repr=False)
    inverse: np.ndarray = field(repr=False)
    e_inverse: EInverse = field(repr=False)

    def apply(self, u):
        return GridFunction(self.grid, self.forward @ u.values)

    def inverse_apply(self, w):
        return GridFunction(self.grid, self.inverse @ w.values)


def build_Q(grid, t, params, sign_a3, max_terms=60):
    """``Q = exp(Lambda)(t, D) o exp(lambda~)(x, D)`` and its inverse.

    Returns ``(apply, inverse_apply, qop)``; ``qop`` carries the dense matrices.
    """
    plus = multiplier_matrix(grid, capital_lambda_multiplier(grid, t, params, 1.0))
    minus = multiplier_matrix(grid, capital_lambda_multiplier(grid, t, params, -1.0))
    einv = invert_e_lambda(grid, params, sign_a3, max_terms=max_terms)
    q = QOperator(grid, t, params, plus @ einv.forward, einv.matrix @ minus, einv)
    return q.apply, q.inverse_apply, q


def q_regularization_norm(grid, t, params, sign_a3, delta, m=0.0, qop=None):
    """Operator norm of ``Q^-1`` from ``H^m`` into ``H^m_{rho'-delta; theta}`` on the grid.

    Gevrey weights use the bracket ``<xi>_h`` with the weight parameter ``h``.
    """
    from .spectral_core import GevreyIndex, gevrey_weights as sobolev_weights
    if qop is None:
        qop = build_Q(grid, t, params, sign_a3)[2]
    keep = np.ones(grid.N, dtype=bool)
    keep[grid.nyquist_fft] = False
    target = sobolev_weights(grid, GevreyIndex(m, params.rho_prime - delta, params.theta), params.h)
    source = sobolev_weights(grid, GevreyIndex(m, 0.0, params.theta), params.h)
    inv_source = np.where(keep, 1.0 / np.where(keep, source, 1.0), 0.0)
    op = multiplier_matrix(grid, target) @ qop.inverse @ multiplier_matrix(grid, inv_source)
    return _op_norm(op)


def dominance_threshold(params):
    """Smallest ``<xi>_h`` beyond which ``rho' <xi>_h^(1/theta) >= k T <xi>_h^(2(1-sigma))``."""
    gap = 1.0 / params.theta - 2.0 * (1.0 - params.sigma)
    if params.k * params.T == 0:
        return params.h
    if params.rho_prime == 0:
        return np.inf
    return max(params.h, (params.k * params.T / params.rho_prime) ** (1.0 / gap))
