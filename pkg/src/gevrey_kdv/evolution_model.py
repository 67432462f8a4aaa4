"""Quasilinear third-order operators, their linearization and the conjugated operator.

The spatial operator is ``P = a3(t) D^3 + sum_{j<=2} a_j(t, x, u) D^j`` with
``D = -i d/dx``.  Each lower-order coefficient is a separable product
``alpha_j(t) d_j(x) b_j(w)`` evaluated at ``w = u(t, x)``.

The conjugated operator ``Q (i P_u) Q^-1 + k <D>_h^(2(1-sigma))`` is assembled
at the symbol level from x-derivative stacks (exact Leibniz rule) and
fourth-order xi-differences, organised in blocks of decreasing order.  Two
realisations of the weight are available: the periodised one (used for the
matrix certificate) and the exact real-line weight sampled on the grid (used
for the positivity checks, whose statement is pointwise on the line).
"""
import warnings
from dataclasses import dataclass, field, replace
from math import factorial

import numpy as np
from scipy import integrate

from .gevrey_weights import (
    CutoffPair,
    InversionDivergenceError,
    WeightParams,
    build_Q,
    capital_lambda,
    frequency_taper,
    gevrey_step,
    invert_e_lambda,
    weight_table,
)
from .jets import Jet
from .psdo_calculus import (
    Symbol,
    band_projector,
    garding_floor,
    multiplier_matrix,
    quantize_matrix,
    spectral_dx,
)
from .spectral_core import GridFunction, GridMismatchError, GridSpec, bracket
from .symbol_jets import (
    XJetSymbol,
    graded_compose,
    graded_multiplier_conjugation,
    graded_parametrix,
)

DECAY_FLOOR = 0.05
COMPACT_INFLATION = 0.1
COMPACT_LIMIT = 10.0
MAX_BOUND_DEPTH = 6


class CoefficientRangeError(ValueError):
    """Raised when ``u`` leaves the admissible range of the coefficient functions."""


class TruncationRuleError(ValueError):
    """Raised when ``n_terms`` violates ``2 - n (2 sigma - 1) <= 0``."""


class ConstantSelectionError(RuntimeError):
    """Raised when no ``h`` makes the positivity conditions hold."""


# ---------------------------------------------------------------------------
# coefficient model


@dataclass(frozen=True)
class EntireFunction:
    """Entire function of ``w``: a polynomial or ``scale * exp(rate * w)``.

    ``coeffs`` holds ascending polynomial coefficients for ``kind == "poly"``
    and ``(scale, rate)`` for ``kind == "exp"``.
    """

    kind: str = "poly"
    coeffs: tuple = (1.0,)

    def __post_init__(self):
        if self.kind not in ("poly", "exp"):
            raise ValueError("kind must be 'poly' or 'exp'")
        object.__setattr__(self, "coeffs", tuple(complex(c) for c in self.coeffs))
        if self.kind == "exp" and len(self.coeffs) != 2:
            raise ValueError("exp needs (scale, rate)")

    @classmethod
    def poly(cls, *coeffs):
        return cls("poly", coeffs)

    @classmethod
    def exp(cls, scale=1.0, rate=1.0):
        return cls("exp", (scale, rate))

    def __call__(self, w):
        w = np.asarray(w, dtype=complex)
        if self.kind == "poly":
            return np.polynomial.polynomial.polyval(w, np.array(self.coeffs))
        scale, rate = self.coeffs
        return scale * np.exp(rate * w)

    def derivative(self, w):
        """Exact ``b'(w)``."""
        w = np.asarray(w, dtype=complex)
        if self.kind == "poly":
            d = np.polynomial.polynomial.polyder(np.array(self.coeffs))
            return np.polynomial.polynomial.polyval(w, d) + 0.0 * w
        scale, rate = self.coeffs
        return scale * rate * np.exp(rate * w)

    @property
    def is_constant(self):
        if self.kind == "exp":
            return self.coeffs[0] == 0 or self.coeffs[1] == 0
        return all(c == 0 for c in self.coeffs[1:])


def periodic_bracket(x, L):
    """Analytic ``2L``-periodic bracket ``(1 + (2L/pi)^2 sin^2(pi x / 2L))^(1/2)``.

    Equals ``<x>`` up to a relative ``O(x^4 / L^2)`` near the origin and
    stays within a factor ``pi/2`` of it on ``[-L, L]``.
    """
    x = np.asarray(x, dtype=float)
    return np.sqrt(1.0 + (2.0 * L / np.pi) ** 2 * np.sin(0.5 * np.pi * x / L) ** 2)


def decay_profile(s, L, kind="analytic", floor=DECAY_FLOOR, mu=1.5):
    """Spatial decay ``<x>^-s`` realised on the torus ``[-L, L)``.

    ``kind="analytic"`` uses the periodic bracket (smooth x-derivatives, the
    default).  ``kind="gevrey"`` keeps ``<x>^-s`` exactly on ``|x| <= L/2``
    and blends into ``floor`` over ``L/2 <= |x| <= 0.9 L`` with a
    Gevrey-``mu`` step.  ``s = 0`` gives the constant 1.
    """
    if s == 0:
        return constant_profile
    if kind == "analytic":
        return lambda x: periodic_bracket(x, L) ** -s
    if kind != "gevrey":
        raise ValueError("kind must be 'analytic' or 'gevrey'")

    def profile(x):
        x = np.asarray(x, dtype=float)
        H = gevrey_step((np.abs(x) - 0.5 * L) / (0.4 * L), mu)
        return bracket(x) ** -s * (1.0 - H) + floor * H

    return profile


def constant_profile(x):
    return np.ones_like(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class CoefficientTerm:
    """One lower-order coefficient ``amplitude(t) * profile(x) * b(w)``.

    ``amplitude`` is a complex number or a callable of ``t``; ``profile`` is a
    vectorised callable of ``x`` carrying the spatial decay ``<x>^-decay``.
    """

    amplitude: object = 1.0
    profile: object = constant_profile
    b: EntireFunction = EntireFunction()
    decay: float = 0.0

    def alpha(self, t):
        return complex(self.amplitude(t)) if callable(self.amplitude) else complex(self.amplitude)

    def value(self, t, x, w):
        return self.alpha(t) * self.profile(x) * self.b(w)

    def dw(self, t, x, w):
        return self.alpha(t) * self.profile(x) * self.b.derivative(w)


@dataclass(frozen=True, eq=False)
class CoefficientModel:
    """Coefficients of ``P`` on a grid.

    Parameters
    ----------
    grid : GridSpec
    a3 : float or callable
        Leading coefficient, a real function of ``t`` only.
    terms : tuple
        ``(a0, a1, a2)``, each a :class:`CoefficientTerm` or ``None``.
    sigma, theta0 : float
        Decay exponent and Gevrey index of the coefficients.
    C_a3 : float
        Lower bound of ``|a3|`` on ``[0, T]``; measured when omitted.
    compact : tuple or None
        Box ``(re_min, re_max, im_min, im_max)`` of admissible ``w`` values.
    """

    grid: GridSpec
    a3: object = 1.0
    terms: tuple = (None, None, None)
    sigma: float = 0.75
    theta0: float = 1.5
    C_a3: float = None
    T: float = 1.0
    compact: tuple = None
    name: str = "custom"

    def __post_init__(self):
        if not 0.5 < self.sigma < 1.0:
            raise ValueError("sigma must lie in (1/2, 1)")
        if self.theta0 <= 1:
            raise ValueError("theta0 must exceed 1")
        if len(self.terms) != 3:
            raise ValueError("terms must hold (a0, a1, a2)")
        ts = np.linspace(0.0, self.T, 2001)
        vals = np.abs(np.array([self.a3_at(t) for t in ts]))
        if self.C_a3 is None:
            object.__setattr__(self, "C_a3", float(vals.min()))
        if self.C_a3 <= 0 or vals.min() < self.C_a3 - 1e-12:
            raise ValueError("|a3(t)| must stay above C_a3 > 0")

    def with_(self, **kw):
        return replace(self, **kw)

    def a3_at(self, t):
        return float(self.a3(t)) if callable(self.a3) else float(self.a3)

    @property
    def a3_max(self):
        ts = np.linspace(0.0, self.T, 2001)
        return float(max(abs(self.a3_at(t)) for t in ts))

    @property
    def sign_a3(self):
        return float(np.sign(self.a3_at(0.0)))

    @property
    def is_linear(self):
        return all(term is None or term.b.is_constant for term in self.terms)

    def with_compact(self, values):
        """Model whose admissible box is the bounding box of ``values`` inflated by 10%."""
        v = np.asarray(values, dtype=complex).ravel()
        box = []
        for part in (v.real, v.imag):
            lo, hi = float(part.min()), float(part.max())
            pad = COMPACT_INFLATION * max(hi - lo, 1e-3)
            box += [lo - pad, hi + pad]
        return self.with_(compact=tuple(box))

    def check_range(self, w):
        """Raise when ``w`` leaves ``COMPACT_LIMIT`` times the admissible box."""
        w = np.asarray(w, dtype=complex)
        if not np.all(np.isfinite(w)):
            raise CoefficientRangeError("u is not finite")
        if self.compact is None:
            return
        r0, r1, i0, i1 = self.compact
        cr, ci = 0.5 * (r0 + r1), 0.5 * (i0 + i1)
        hr, hi = 0.5 * COMPACT_LIMIT * (r1 - r0), 0.5 * COMPACT_LIMIT * (i1 - i0)
        if np.any(np.abs(w.real - cr) > hr) or np.any(np.abs(w.imag - ci) > hi):
            raise CoefficientRangeError("u left the admissible range of the coefficients")

    def _values(self, u):
        w = u.values if isinstance(u, GridFunction) else np.asarray(u, dtype=complex)
        if w.shape != (self.grid.N,):
            raise GridMismatchError("u does not live on the model grid")
        self.check_range(w)
        return w

    def coefficient(self, j, t, u):
        """Grid values of ``a_j(t, x, u(x))``."""
        w = self._values(u)
        term = self.terms[j]
        if term is None:
            return np.zeros(self.grid.N, dtype=complex)
        return term.value(t, self.grid.x, w)

    def dcoefficient(self, j, t, u):
        """Grid values of ``(d_w a_j)(t, x, u(x))``."""
        w = self._values(u)
        term = self.terms[j]
        if term is None:
            return np.zeros(self.grid.N, dtype=complex)
        return term.dw(t, self.grid.x, w)

    def coefficients(self, t, u):
        return tuple(self.coefficient(j, t, u) for j in range(3))

    def decay_constant(self, j):
        """Smallest ``C`` with ``|d_j(x)| <= C <x>^(-j sigma/2)`` on the grid."""
        term = self.terms[j]
        if term is None:
            return 0.0
        x = self.grid.x
        return float(np.max(np.abs(term.profile(x)) * bracket(x) ** (j * self.sigma / 2.0)))


def _Dpow(values, grid, j):
    """``D^j`` applied spectrally to grid values."""
    return spectral_dx(values, grid, j) * (-1j) ** j


def apply_P(model, u, v, t):
    """Spatial part ``a3 D^3 v + sum_j a_j(t, x, u) D^j v``."""
    if u.grid != model.grid or v.grid != model.grid:
        raise GridMismatchError("u, v and the model must share a grid")
    grid = model.grid
    out = model.a3_at(t) * _Dpow(v.values, grid, 3)
    for j in range(3):
        if model.terms[j] is not None:
            out = out + model.coefficient(j, t, u) * _Dpow(v.values, grid, j)
    return GridFunction(grid, out)


# ---------------------------------------------------------------------------
# linearization


@dataclass(eq=False)
class LinearizedCoefficients:
    """Coefficients frozen along a trajectory ``u(t)``.

    ``times`` are the solver nodes and ``values[i]`` the samples of ``u`` at
    ``times[i]``; between nodes ``u`` is interpolated by cubic splines.
    """

    model: CoefficientModel
    times: np.ndarray
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.times = np.atleast_1d(np.asarray(self.times, dtype=float))
        self.values = np.asarray(self.values, dtype=complex).reshape(len(self.times), -1)
        if self.values.shape[1] != self.model.grid.N:
            raise GridMismatchError("trajectory does not live on the model grid")
        self._spline = None

    def u_at(self, t):
        hit = np.nonzero(np.isclose(self.times, t, rtol=0.0, atol=1e-14))[0]
        if hit.size:
            return self.values[hit[0]]
        if len(self.times) == 1:
            return self.values[0]
        if self._spline is None:
            from scipy.interpolate import CubicSpline
            self._spline = CubicSpline(self.times, self.values, axis=0)
        return self._spline(t)

    def coefficient(self, j, t):
        return self.model.coefficient(j, t, self.u_at(t))

    def a0_tilde(self, t):
        """``a0 + sum_j (d_w a_j)(u) D^j u``."""
        u = self.u_at(t)
        out = self.model.coefficient(0, t, u)
        for j in range(3):
            if self.model.terms[j] is not None and not self.model.terms[j].b.is_constant:
                out = out + self.model.dcoefficient(j, t, u) * _Dpow(u, self.model.grid, j)
        return out

    def coefficients(self, t, tilde=True):
        """``(a0 or a0_tilde, a1, a2)`` at time ``t``."""
        a0 = self.a0_tilde(t) if tilde else self.coefficient(0, t)
        return a0, self.coefficient(1, t), self.coefficient(2, t)

    def symbol(self, j, t):
        """``a_j(t, x, u) xi^j`` as a :class:`Symbol`."""
        grid = self.model.grid
        return Symbol(grid, self.coefficient(j, t)[:, None] * grid.xi[None, :] ** j, xi_order=j,
                      x_order=-j * self.model.sigma / 2.0)

    def a2_lin(self, t):
        return self.symbol(2, t)

    def a1_lin(self, t):
        return self.symbol(1, t)


def linearize(model, u_traj, times=None):
    """Freeze the coefficients along ``u_traj`` (list of GridFunctions or an array)."""
    if isinstance(u_traj, GridFunction):
        u_traj = [u_traj]
    vals = np.array([u.values if isinstance(u, GridFunction) else np.asarray(u) for u in u_traj])
    if times is None:
        times = np.linspace(0.0, model.T, len(vals)) if len(vals) > 1 else np.zeros(1)
    return LinearizedCoefficients(model, times, vals)


# ---------------------------------------------------------------------------
# coefficient bounds


@dataclass
class DerivativeBoundReport:
    """Constants of ``|d_x^b a_j| <= C B^b b!^theta <x>^(-j sigma/2)``.

    ``per_coefficient[j]`` is the fitted ``C`` for ``a_j`` and ``ratios[j, b]``
    the sup of the normalised ``b``-th derivative.
    """

    B: float
    theta: float
    beta_max: int
    per_coefficient: tuple
    ratios: np.ndarray = field(repr=False)

    @property
    def C(self):
        return max(self.per_coefficient)

    @property
    def finite(self):
        return bool(np.all(np.isfinite(self.ratios)))


def coefficient_derivative_bound_check(model, u, B=1.0, beta_max=4, t=0.0, theta=None, js=(0, 1, 2)):
    """Smallest ``C`` with ``|d_x^b a_j(t, x, u)| <= C B^b b!^theta <x>^(-j sigma/2)`` on the grid."""
    if beta_max > MAX_BOUND_DEPTH:
        raise ValueError(f"beta_max must not exceed {MAX_BOUND_DEPTH}")
    theta = model.theta0 if theta is None else theta
    grid = model.grid
    bx = bracket(grid.x)
    ratios = np.zeros((3, beta_max + 1))
    for j in js:
        a = model.coefficient(j, t, u)
        for b in range(beta_max + 1):
            d = spectral_dx(a, grid, b)
            ratios[j, b] = np.max(np.abs(d) * bx ** (j * model.sigma / 2.0)) / (
                B ** b * factorial(b) ** theta)
    per = tuple(float(ratios[j].max()) for j in range(3))
    return DerivativeBoundReport(float(B), float(theta), beta_max, per, ratios)


def measure_c_omega(model, u_list, times=None, depth=2):
    """Depth-2 bound constant of ``a2`` and ``a1`` over a trajectory (``B = 1``)."""
    if isinstance(u_list, GridFunction):
        u_list = [u_list]
    times = [0.0] * len(u_list) if times is None else times
    c = 0.0
    for t, u in zip(times, u_list):
        rep = coefficient_derivative_bound_check(model, u, 1.0, depth, t, js=(1, 2))
        c = max(c, rep.per_coefficient[1], rep.per_coefficient[2])
    return c


# ---------------------------------------------------------------------------
# conjugated operator


def default_n_terms(sigma):
    """Smallest ``n`` with ``2 - n (2 sigma - 1) <= 0``."""
    return int(np.ceil(2.0 / (2.0 * sigma - 1.0) - 1e-12))


def _check_n_terms(n_terms, sigma):
    if n_terms is None:
        return default_n_terms(sigma)
    if 2.0 - n_terms * (2.0 * sigma - 1.0) > 1e-12:
        raise TruncationRuleError(f"n_terms = {n_terms} violates 2 - n(2 sigma - 1) <= 0")
    return int(n_terms)


def _capital_lambda_derivs(t, xi, params, n):
    """Rows ``d_xi^j Lambda(t, xi)`` for ``j = 1..n``."""
    v = Jet.variable(xi, n)
    bh = (v * v + params.h ** 2).sqrt()
    lam = bh ** (1.0 / params.theta) * params.rho_prime + bh ** (2.0 * (1.0 - params.sigma)) * (
        params.k * (params.T - t))
    return [lam.derivative(j) for j in range(1, n + 1)]


def _hermitian_correction(q, n_terms):
    """``-sum_{1 <= a < n} (i / (2 a!)) d_xi^a D_x^a q`` for a real symbol ``q``."""
    out = None
    for a in range(1, n_terms):
        term = q.Dx(a).dxi(a) * (-0.5j / factorial(a))
        out = term if out is None else out + term
    return out


def _u_values(u, t):
    if isinstance(u, LinearizedCoefficients):
        return u.u_at(t)
    if isinstance(u, GridFunction):
        return u.values
    return np.asarray(u, dtype=complex)


def _blocks(model, w, t, params, n_terms, periodic):
    """Block symbols of the conjugated operator (see :class:`ConjugatedAssembly`)."""
    grid = model.grid
    K = 3 * n_terms
    sign = model.sign_a3
    xi = grid.xi
    x = grid.x
    a3 = model.a3_at(t)
    vals = {}
    for name in ("lambda2", "lambda1"):
        tab = weight_table(grid, params, sign, name, periodic=periodic, x_order=K).values
        vals[name] = XJetSymbol.from_stack(grid, tab.astype(complex))
    lam2, lam1 = vals["lambda2"], vals["lambda1"]
    lam = lam2 + lam1
    coef = [XJetSymbol.from_x_values(grid, model.coefficient(j, t, w), K) for j in range(3)]
    P3 = XJetSymbol.from_xi(grid, 1j * a3 * xi ** 3, K)
    P2 = coef[2] * (1j * xi ** 2)[None, :]
    P1 = coef[1] * (1j * xi)[None, :]
    P0 = coef[0] * 1j
    D2 = lam2.dx(1) * (-3.0 * a3 * xi ** 2)[None, :]
    D1 = lam1.dx(1) * (-3.0 * a3 * xi ** 2)[None, :]

    S = np.abs(CutoffPair(params.mu, sign).w(xi / params.h))
    if periodic:
        S = S * frequency_taper(grid, params.mu)
    bh = bracket(xi, params.h)[None, :]
    bx = bracket(x)[:, None]
    sig = params.sigma
    main2 = 3.0 * params.M2 * abs(a3) * xi[None, :] ** 2 * bx ** -sig * S[None, :]
    main1 = 3.0 * params.M1 * abs(a3) * xi[None, :] ** 2 / bh * bx ** (-sig / 2.0) * S[None, :]

    # grade-2 term of exp(lam2) (i a3 xi^3) exp(lam2)^-1 divided by i
    c3 = XJetSymbol.from_xi(grid, a3 * xi ** 3 + 0j, K)
    l1, l2 = lam2.dx(1), lam2.dx(2)
    q = l2 - l1 * l1
    l1xi = l1.dxi(1)
    d1 = ((c3 * q).dxi(2) * 0.5 - c3.dxi(1) * l2.dxi(1) + (c3 * l1).dxi(1) * l1xi
          - c3 * (q.dxi(2) + l1xi * l1xi * 2.0) * 0.5)

    # exp(lam~) conjugation remainders of the lower-order terms
    E, Ei = lam.exp(), (-lam).exp()
    X = [1.0] + [Ei * E.dxi(b) for b in range(1, n_terms)]
    Y = [1.0] + [E * Ei.Dx(a) for a in range(1, n_terms)]

    def remainder(p):
        # graded list: entry g holds the terms with alpha + beta = g
        out = [None] * n_terms
        for al in range(n_terms):
            for be in range(n_terms - al):
                if al + be == 0:
                    continue
                term = (p.Dx(be) * X[be] * Y[al]).dxi(al) * (1.0 / (factorial(al) * factorial(be)))
                g = al + be
                out[g] = term if out[g] is None else out[g] + term
        return out

    def inverse_corrected(parts):
        # (.) o (1 - i d_xi d_x lam2): the correction raises the grade by one
        out = list(parts)
        for g in range(n_terms - 1, 0, -1):
            if parts[g - 1] is not None:
                corr = parts[g - 1] * l1xi * (-1j)
                out[g] = corr if out[g] is None else out[g] + corr
        return out

    def total_of(parts):
        out = None
        for q in parts:
            if q is not None:
                out = q if out is None else out + q
        return out

    cross = coef[2] * (xi ** 2)[None, :] * l1xi      # a2 xi^2 d_xi d_x lam2
    ia2_l = inverse_corrected(remainder(P2))
    ia1_l = inverse_corrected(remainder(P1))

    Lder = _capital_lambda_derivs(t, xi, params, n_terms - 1)

    def conjL(parts):
        return graded_multiplier_conjugation(parts, Lder, n_terms)

    base2 = [P2, D2]
    b2 = conjL(base2) - total_of(base2)
    ia2_full = conjL(ia2_l)
    base1 = [P1, D1 + cross, d1 * 1j]
    q1 = total_of(base1)
    b1 = conjL(base1) - q1
    ia1_full = conjL(ia1_l)
    drift = params.k * bh ** (2.0 * (1.0 - sig))

    out = dict(
        P3=P3, P2=P2, P1=P1, P0=P0, D2=D2, D1=D1, main2=main2, main1=main1, d1=d1, cross=cross,
        b2=b2, ia2=ia2_full, b1=b1, ia1=ia1_full, drift=np.broadcast_to(drift, (grid.N, grid.N)),
        lam=lam, coef=coef,
    )
    out["a2"] = P2.table + main2 + b2.table + ia2_full.table
    out["a1"] = P1.table + main1 + 1j * d1.table + cross.table + b1.table + ia1_full.table
    out["alow"] = drift + (D2.table - main2) + (D1.table - main1)
    re_a2 = coef[2].real() * (xi ** 2)[None, :]
    out["c"] = _hermitian_correction(re_a2, n_terms).table
    out["e"] = _hermitian_correction((b2 + ia2_full).imag(), n_terms).table
    return out


def _conjugated_total(model, w, t, params, n_terms, lam, coef):
    """Symbol of ``exp(Lambda) exp(lam~) (i P) exp(lam~)^-1 exp(-Lambda)`` plus the drift."""
    grid = model.grid
    xi = grid.xi
    p = XJetSymbol.from_xi(grid, 1j * model.a3_at(t) * xi ** 3, lam.order)
    for j in range(3):
        p = p + coef[j].truncate(lam.order) * (1j * xi ** j)[None, :]
    inner = graded_compose(graded_compose([lam.exp()], [p], n_terms), graded_parametrix(lam, n_terms),
                           n_terms)
    Lder = _capital_lambda_derivs(t, xi, params, n_terms - 1)
    total = graded_multiplier_conjugation(inner, Lder, n_terms)
    drift = params.k * bracket(xi, params.h) ** (2.0 * (1.0 - params.sigma))
    return total.table + drift[None, :]


@dataclass
class CertificateReport:
    """Dense-matrix check of the assembled symbol on the band ``|xi| < band * max|xi|``.

    ``residual = ||B (M - M_a) B|| / ||B M_a B||`` with ``M`` the conjugated
    matrix built from ``Q`` and ``M_a`` the quantised assembled symbol.
    ``time_block`` is the relative deviation of ``Q d_t(Q^-1)`` from the
    drift multiplier.
    """

    residual: float
    numerator: float
    denominator: float
    band: float
    r_norm: float
    time_block: float


@dataclass(eq=False)
class ConjugatedAssembly:
    """Blocks of the conjugated operator at time ``t``.

    ``a2``, ``a1``, ``alow`` are the order-2, order-1 and order-``2(1-sigma)``
    blocks (``alow`` holds the drift ``k <xi>_h^(2(1-sigma))`` and the cutoff
    tails), ``c`` and ``e`` the Hermitian-part corrections moved from ``a2`` to
    order 1, ``r0`` the remainder (torus realisation only) and ``total`` the
    full conjugated symbol.  ``a3_symbol`` is ``i a3 xi^3``.
    """

    model: CoefficientModel
    t: float
    params: WeightParams
    n_terms: int
    realization: str
    a3_symbol: Symbol
    a2: Symbol
    a1: Symbol
    alow: Symbol
    c: Symbol
    e: Symbol
    r0: Symbol = None
    total: Symbol = None
    u_values: np.ndarray = field(default=None, repr=False)
    constants: object = None
    _floors: dict = field(default=None, repr=False)

    @property
    def grid(self):
        return self.model.grid

    @property
    def a1_corrected(self):
        return self.a1 + self.c + self.e

    def positivity_symbols(self):
        """Real parts whose nonnegativity is claimed: ``a2``, ``a1 + c + e``, ``alow``."""
        g = self.grid
        return {
            "a2": Symbol(g, self.a2.table.real, xi_order=2.0, x_order=-self.params.sigma),
            "a1": Symbol(g, self.a1_corrected.table.real, xi_order=1.0,
                         x_order=-self.params.sigma / 2.0),
            "alow": Symbol(g, self.alow.table.real, xi_order=2.0 * (1.0 - self.params.sigma)),
        }

    @property
    def floors(self):
        """Garding floors of the operators of the three positivity symbols."""
        if self._floors is None:
            self._floors = {k: garding_floor(s) for k, s in self.positivity_symbols().items()}
        return self._floors

    def certificate(self, band=0.5):
        """Compare ``Q op(iP) Q^-1 + k<D>^(2(1-sigma))`` with ``op(total)``."""
        if self.total is None:
            raise ValueError("the certificate needs the torus realisation")
        grid = self.grid
        model = self.model
        _, _, qop = build_Q(grid, self.t, self.params, model.sign_a3)
        xi = grid.xi
        iP = 1j * model.a3_at(self.t) * xi[None, :] ** 3
        for j in range(3):
            iP = iP + 1j * model.coefficient(j, self.t, self.u_values)[:, None] * xi[None, :] ** j
        drift = self.params.k * bracket(grid.xi_fft, self.params.h) ** (2.0 * (1.0 - self.params.sigma))
        dmat = multiplier_matrix(grid, drift)
        M = qop.forward @ quantize_matrix(Symbol(grid, iP)) @ qop.inverse + dmat
        Ma = quantize_matrix(self.total)
        Bm = band_projector(grid, band)
        num = float(np.linalg.norm(Bm @ (M - Ma) @ Bm, 2))
        den = float(np.linalg.norm(Bm @ Ma @ Bm, 2))
        # Q d_t(Q^-1) = exp(Lambda) E E^-1 k<D>^(2(1-sigma)) exp(-Lambda)
        tb = qop.forward @ qop.inverse @ dmat
        tnorm = float(np.linalg.norm(Bm @ (tb - dmat) @ Bm, 2) / max(np.linalg.norm(Bm @ dmat @ Bm, 2), 1e-300))
        return CertificateReport(num / den if den > 0 else num, num, den, band, qop.e_inverse.r_norm, tnorm)


def time_block(grid, t, params, delta=None):
    """Assembled ``exp(Lambda) d_t exp(-Lambda)`` minus ``d_t``, as a table, and its error.

    The derivative of ``-Lambda`` is taken by a centred difference in ``t``
    (exact for the affine time dependence up to rounding).  Returns
    ``(table, max |table - k <xi>_h^(2(1-sigma))|)``.
    """
    delta = 0.25 * params.T if delta is None else delta
    lam_p = capital_lambda(t + delta, grid.xi, params)
    lam_m = capital_lambda(t - delta, grid.xi, params)
    row = -(lam_p - lam_m) / (2.0 * delta)
    table = np.broadcast_to(row[None, :], (grid.N, grid.N))
    target = params.k * bracket(grid.xi, params.h) ** (2.0 * (1.0 - params.sigma))
    return table, float(np.max(np.abs(table - target[None, :])))


def assemble_conjugated(model, u, params, t=0.0, n_terms=None, realization="torus", constants=None):
    """Assemble the blocks of ``Q (i P_u) Q^-1 + k <D>_h^(2(1-sigma))`` at time ``t``.

    Parameters
    ----------
    model : CoefficientModel
    u : GridFunction, array or LinearizedCoefficients
        The frozen function (evaluated at ``t`` for trajectories).
    params : WeightParams
        Weight parameters carrying ``M2, M1, k, h, rho', T``.
    n_terms : int
        Expansion length; defaults to the truncation rule.
    realization : {"torus", "line"}
        Periodised weight (with remainder ``r0`` and the certificate) or the
        exact real-line weight sampled on the grid.
    """
    if realization not in ("torus", "line"):
        raise ValueError("realization must be 'torus' or 'line'")
    if params.sigma != model.sigma:
        params = params.with_(sigma=model.sigma)
    n_terms = _check_n_terms(n_terms, params.sigma)
    grid = model.grid
    w = _u_values(u, t)
    periodic = realization == "torus"
    if periodic:
        # the certificate and the solver need Q; fail early when it cannot be inverted
        invert_e_lambda(grid, params, model.sign_a3)
    blk = _blocks(model, w, t, params, n_terms, periodic)
    sig = params.sigma
    mk = lambda table, m1, m2: Symbol(grid, table, xi_order=m1, x_order=m2, gevrey_mu=params.mu)
    a3s = mk(blk["P3"].table, 3.0, 0.0)
    a2 = mk(blk["a2"], 2.0, -sig)
    a1 = mk(blk["a1"], 1.0, -sig / 2.0)
    alow = mk(blk["alow"], 2.0 * (1.0 - sig), 0.0)
    c = mk(blk["c"], 1.0, -sig / 2.0)
    e = mk(blk["e"], 1.0, -sig / 2.0)
    r0 = total = None
    if periodic:
        tot = _conjugated_total(model, w, t, params, n_terms, blk["lam"], blk["coef"])
        total = mk(tot, 3.0, 0.0)
        r0 = mk(tot - (a3s.table + a2.table + a1.table + alow.table), 0.0, 0.0)
    return ConjugatedAssembly(model, float(t), params, n_terms, realization, a3s, a2, a1, alow, c, e,
                              r0, total, np.array(w), constants)


# ---------------------------------------------------------------------------
# positivity


def _xi_region(grid, h):
    m = np.abs(grid.xi) >= 2.0 * h
    m[0] = False  # Nyquist column
    return m


@dataclass
class LowerBoundReport:
    """Normalised minima on ``|xi| >= 2h`` and Garding floors of the three blocks."""

    minima: dict
    floors: dict
    h: float

    def passed(self, tol=1e-8):
        return all(v >= -tol for v in self.minima.values())

    @property
    def negative(self):
        return {k: v for k, v in self.minima.items() if v < -1e-8}


def normalized_minima(assembly):
    """Minima of ``Re a2/(<xi>^2 <x>^-s)``, ``Re(a1+c+e)/(<xi> <x>^(-s/2))`` and ``Re alow/<xi>^(2(1-s))``."""
    grid = assembly.grid
    p = assembly.params
    bh = bracket(grid.xi, p.h)[None, :]
    bx = bracket(grid.x)[:, None]
    sig = p.sigma
    cols = _xi_region(grid, p.h)
    sy = assembly.positivity_symbols()
    norms = {"a2": bh ** 2 * bx ** -sig, "a1": bh * bx ** (-sig / 2.0),
             "alow": bh ** (2.0 * (1.0 - sig)) + 0.0 * bx}
    out = {}
    for k, s in sy.items():
        r = (s.table.real / norms[k])[:, cols]
        out[k] = float(r.min()) if r.size else np.inf
    return out


def verify_lower_bounds(assembly, floors=True):
    """Normalised grid minima on ``|xi| >= 2h`` and the Garding floor of each block."""
    return LowerBoundReport(normalized_minima(assembly), assembly.floors if floors else {},
                            assembly.params.h)


# ---------------------------------------------------------------------------
# constant selection


@dataclass
class ConstantChoice:
    """Constants of the weights and the slack of the three positivity conditions.

    ``displays`` maps the condition names to their values (all must be > 0):
    ``"order2"``: ``3 C_a3 M2 / 2 - C_Omega - corr2(h)``,
    ``"order1"``: ``3 C_a3 M1 / 2 - C_Omega - C_Omega_lambda2(h) - corr1(h)``,
    ``"low"``: ``k - 2^sigma 3 A3 M2 - 2^(sigma/2) 3 A3 M1 h^-(1-sigma)``.
    """

    M2: float
    M1: float
    k: float
    h0: float
    C_omega: float
    C_omega_lambda2: float
    C_a3: float
    A3: float
    displays: dict
    sigma: float = 0.75
    tried: list = field(default_factory=list)

    def params(self, base):
        return base.with_(M2=self.M2, M1=self.M1, k=self.k, h=self.h0)

    @property
    def ratios(self):
        """Safety ratios of the three unperturbed conditions (each >= the safety factor)."""
        tiny = 1e-300
        return {
            "order2": 1.5 * self.C_a3 * self.M2 / max(self.C_omega, tiny),
            "order1": 1.5 * self.C_a3 * self.M1 / max(self.C_omega + self.C_omega_lambda2, tiny),
            "low": self.k / (2.0 ** self.sigma * 3.0 * self.A3 * self.M2),
        }


def _sup_ratio(table, norm, cols):
    r = np.abs(table / norm)[:, cols]
    return float(r.max()) if r.size else 0.0


def base_constants(C_omega, C_a3, A3, sigma, safety=2.0, floor=1.0):
    """``M2 = max(safety * 2 C_Omega / (3 C_a3), floor)`` and ``k = safety * 2^sigma * 3 A3 M2``."""
    M2 = max(safety * 2.0 * C_omega / (3.0 * C_a3), floor)
    return M2, safety * 2.0 ** sigma * 3.0 * A3 * M2


def choose_constants(model, u, params, t=0.0, n_terms=None, C_omega=None, safety=2.0, floor=1.0,
                     h_max=2 ** 16, check_inverse=True):
    """Pick ``M2, M1, k`` and the smallest power-of-two ``h`` making the conditions hold.

    ``M2 = safety * 2 C_Omega / (3 C_a3)`` and
    ``M1 = safety * 2 (C_Omega + C_Omega_lambda2) / (3 C_a3)`` (each at least
    ``floor``), ``k = safety * 2^sigma * 3 A3 M2`` with ``A3 = max |a3|``.
    For each ``h`` the h-dependent corrections are measured from the blocks of
    the real-line realisation on ``|xi| >= 2h``; ``h`` is accepted when the
    three conditions hold and ``exp(lam~)(x, D)`` can be inverted on the torus.
    """
    if params.sigma != model.sigma:
        params = params.with_(sigma=model.sigma)
    n_terms = _check_n_terms(n_terms, params.sigma)
    grid = model.grid
    w = _u_values(u, t)
    sig = params.sigma
    Ca3, A3 = model.C_a3, model.a3_max
    if C_omega is None:
        C_omega = measure_c_omega(model, [w], [t])
    M2, k = base_constants(C_omega, Ca3, A3, sig, safety, floor)
    xi_top = np.pi * grid.N / (2.0 * grid.L)
    bx = bracket(grid.x)[:, None]
    tried = []
    h = 1.0
    while h <= h_max:
        cols = _xi_region(grid, h)
        if not cols.any():
            break
        bh = bracket(grid.xi, h)[None, :]
        n2 = bh ** 2 * bx ** -sig
        n1 = bh * bx ** (-sig / 2.0)
        trial = params.with_(M2=M2, M1=floor, k=k, h=h)
        blk = _blocks(model, w, t, trial, n_terms, periodic=False)
        c_l2 = _sup_ratio((blk["cross"].table + blk["c"]).real, n1, cols)
        M1 = max(safety * 2.0 * (C_omega + c_l2) / (3.0 * Ca3), floor)
        trial = trial.with_(M1=M1)
        blk = _blocks(model, w, t, trial, n_terms, periodic=False)
        corr2 = _sup_ratio((blk["b2"].table + blk["ia2"].table).real, n2, cols)
        corr1 = _sup_ratio((blk["b1"].table + blk["ia1"].table + blk["e"]).real, n1, cols)
        disp = {
            "order2": 1.5 * Ca3 * M2 - C_omega - corr2,
            "order1": 1.5 * Ca3 * M1 - C_omega - c_l2 - corr1,
            "low": k - 2.0 ** sig * 3.0 * A3 * M2 - 2.0 ** (sig / 2.0) * 3.0 * A3 * M1 * h ** -(1.0 - sig),
        }
        ok = all(v > 0 for v in disp.values())
        r_ok = True
        if ok and check_inverse:
            try:
                invert_e_lambda(grid, trial, model.sign_a3)
            except InversionDivergenceError:
                r_ok = False
        tried.append((h, disp, r_ok))
        if ok and r_ok:
            return ConstantChoice(M2, M1, k, h, C_omega, c_l2, Ca3, A3, disp, sig, tried)
        if 4.0 * h > xi_top:
            break
        h *= 2.0
    raise ConstantSelectionError(
        f"no h <= {min(h_max, xi_top / 2):g} satisfies the positivity conditions on this grid; "
        f"last displays {tried[-1][1] if tried else None}")


# ---------------------------------------------------------------------------
# necessary condition diagnostic


def trig_interpolate(values, grid, y):
    """Evaluate the trigonometric interpolant of grid values at arbitrary points."""
    c = np.fft.fft(values) / grid.N
    c[grid.nyquist_fft] = 0.0
    y = np.asarray(y, dtype=float)
    phase = np.exp(1j * np.multiply.outer(y + grid.L, grid.xi_fft))
    return phase @ c


def _symmetric_cumulative(f, rhos, peak):
    """``int_{-rho}^{rho} f`` for every ``rho`` in ``rhos``, splitting at ``peak``."""
    def piece(a, b):
        pts = [peak] if a < peak < b else None
        # roundoff warnings on far tails mean the piece is already at machine accuracy
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            return integrate.quad(f, a, b, points=pts, epsabs=1e-10, epsrel=1e-10, limit=500)[0]

    out = np.empty(len(rhos))
    acc, prev = 0.0, 0.0
    for n, rho in enumerate(rhos):
        acc += piece(-rho, -prev) + piece(prev, rho)
        out[n] = acc
        prev = rho
    return out


@dataclass
class NecessaryConditionReport:
    """``S(rho)`` with its logarithmic and power-law least-squares fits.

    ``log_fit = (M, N)`` for ``M log(1 + rho) + N`` and ``power_fit = c`` for
    ``c rho^(1 - sigma)``; residuals are Euclidean norms over ``rhos``.
    """

    rhos: np.ndarray
    S: np.ndarray
    log_fit: tuple
    power_fit: float
    log_residual: float
    power_residual: float
    sigma: float

    @property
    def log_wins(self):
        return self.log_residual < self.power_residual

    @property
    def ratio(self):
        """``log_residual / power_residual`` (small when the log growth condition holds)."""
        if self.power_residual == 0:
            return 0.0 if self.log_residual == 0 else np.inf
        return self.log_residual / self.power_residual


def necessary_condition_scan(model, u, rhos, T=None, n_t=5, x_points=None, sigma=None):
    """``S(rho) = sup_x min_{0<=tau<=t<=T} int_{-rho}^{rho} Im a2(t, x + 3 a3(tau) s, u) ds``.

    ``x_points`` defaults to the grid points whose shifted range stays in
    ``[-L/2, L/2]`` (where the decay profiles are exact); every shifted point
    must stay in ``[-L, L]``.
    """
    grid = model.grid
    T = model.T if T is None else T
    sigma = model.sigma if sigma is None else sigma
    rhos = np.asarray(rhos, dtype=float)
    if np.any(np.diff(rhos) <= 0):
        raise ValueError("rhos must be increasing")
    ts = np.linspace(0.0, T, n_t)
    A3 = max(abs(model.a3_at(s)) for s in ts)
    if x_points is None:
        reach = max(grid.L / 2 - 3.0 * A3 * rhos[-1], 0.0)
        x = grid.x[np.abs(grid.x) <= reach]
    else:
        x = np.asarray(x_points, dtype=float)
    if np.max(np.abs(x)) + 3.0 * A3 * rhos[-1] > grid.L:
        raise ValueError("shift out of domain: |x| + 3|a3| rho exceeds L")
    w = u.values if isinstance(u, GridFunction) else np.asarray(u, dtype=complex)
    term = model.terms[2]
    # distinct (alpha(t), a3(tau)) combinations; constant coefficients collapse to one
    combos = sorted({(term.alpha(t) if term is not None else 0j, model.a3_at(tau))
                     for i, t in enumerate(ts) for tau in ts[: i + 1]},
                    key=lambda c: (c[0].real, c[0].imag, c[1]))
    S = np.zeros(len(rhos))
    if term is not None:
        const_b = term.b.is_constant
        b0 = complex(term.b(0.0))
        vals = np.empty((len(combos), len(x), len(rhos)))
        for m, (alpha, a3) in enumerate(combos):
            shift = 3.0 * a3
            for i, x0 in enumerate(x):

                def f(s, alpha=alpha, x0=x0, shift=shift):
                    y = x0 + shift * s
                    bw = b0 if const_b else complex(term.b(trig_interpolate(w, grid, [y])[0]))
                    return float((alpha * term.profile(y) * bw).imag)

                vals[m, i] = _symmetric_cumulative(f, rhos, -x0 / shift)
        S = vals.min(axis=0).max(axis=0)
    A = np.column_stack([np.log1p(rhos), np.ones_like(rhos)])
    coef, *_ = np.linalg.lstsq(A, S, rcond=None)
    r_log = float(np.linalg.norm(A @ coef - S))
    pw = rhos ** (1.0 - sigma)
    c = float(pw @ S / (pw @ pw))
    r_pow = float(np.linalg.norm(c * pw - S))
    return NecessaryConditionReport(rhos, S, (float(coef[0]), float(coef[1])), c, r_log, r_pow, sigma)


# ---------------------------------------------------------------------------
# presets


def kdv_parameters(c=1.0, sigma_bar=1.0 / 3.0, alpha=0.1):
    """``(A, B, C)`` of ``u_t + A u_xxx + (B + C u) u_x = 0`` for the shallow-water form."""
    return 0.5 * c * sigma_bar, c * alpha, 1.5 * c


def kdv_model(grid, c=1.0, sigma_bar=1.0 / 3.0, alpha=0.1, sigma=0.75, theta0=1.5, T=1.0):
    """Shallow-water KdV: ``a3 = -A``, ``a1 = B + C w``."""
    A, B, C = kdv_parameters(c, sigma_bar, alpha)
    a1 = CoefficientTerm(1.0, constant_profile, EntireFunction.poly(B, C), 0.0)
    return CoefficientModel(grid, -A, (None, a1, None), sigma, theta0, T=T, name="kdv")


def kdv_soliton(grid, t, kappa=1.0, c=1.0, sigma_bar=1.0 / 3.0, alpha=0.1, x0=0.0):
    """Travelling wave ``a sech^2(kappa (x - x0 - V t))`` with ``a = 12 A kappa^2 / C``, ``V = B + 4 A kappa^2``."""
    A, B, C = kdv_parameters(c, sigma_bar, alpha)
    amp = 12.0 * A * kappa ** 2 / C
    V = B + 4.0 * A * kappa ** 2
    z = np.mod(grid.x - x0 - V * t + grid.L, 2.0 * grid.L) - grid.L
    return GridFunction(grid, amp / np.cosh(kappa * z) ** 2 + 0j)


def kdvb_model(grid, c=1.0, b=-0.05, a=1.0, sigma=0.75, theta0=1.5, T=1.0):
    """KdV-Burgers ``D_t - c D^3 + 5 i b D^2 + 2 a u D``; ``b < 0`` is dissipative."""
    a2 = CoefficientTerm(5j * b, constant_profile, EntireFunction.poly(1.0), 0.0)
    a1 = CoefficientTerm(2.0 * a, constant_profile, EntireFunction.poly(0.0, 1.0), 0.0)
    return CoefficientModel(grid, -c, (None, a1, a2), sigma, theta0, T=T, name="kdvb")


def linear_gevrey_model(grid, amplitude=0.5, s=0.75, a3=-1.0, sigma=0.75, theta0=1.5, T=1.0,
                        profile="analytic"):
    """Genuinely linear model with ``a2 = i amplitude <x>^-s`` (realised on the torus)."""
    a2 = CoefficientTerm(1j * amplitude, decay_profile(s, grid.L, profile), EntireFunction.poly(1.0), s)
    return CoefficientModel(grid, a3, (None, None, a2), sigma, theta0, T=T, name="linear-gevrey")


def neccond_model(grid, s=1.0, a3=-1.0, sigma=0.75, T=1.0):
    """``Im a2 = <x>^-s``, exact on ``|x| <= L/2``, for the growth diagnostic."""
    a2 = CoefficientTerm(1j, decay_profile(s, grid.L, "gevrey"), EntireFunction.poly(1.0), s)
    return CoefficientModel(grid, a3, (None, None, a2), sigma, 1.5, T=T, name="neccond")


def mixed_model(grid, sigma=0.75, theta0=1.5, T=1.0, profile="analytic"):
    """Complex ``w``-dependent coefficients of every order (conjugation tests)."""
    L = grid.L
    a2 = CoefficientTerm(0.3 + 0.5j, decay_profile(sigma, L, profile), EntireFunction.poly(1.0, 1.0), sigma)
    a1 = CoefficientTerm(0.2 + 0.1j, decay_profile(sigma / 2, L, profile), EntireFunction.poly(1.0, 1.0),
                         sigma / 2)
    a0 = CoefficientTerm(0.1, constant_profile, EntireFunction.exp(1.0, 1.0), 0.0)
    return CoefficientModel(grid, -1.0, (a0, a1, a2), sigma, theta0, T=T, name="mixed")


PRESETS = {
    "kdv": kdv_model,
    "kdvb": kdvb_model,
    "linear-gevrey": linear_gevrey_model,
    "neccond": neccond_model,
    "mixed": mixed_model,
}


def preset(name, grid, **kw):
    """Build a named coefficient model."""
    try:
        return PRESETS[name](grid, **kw)
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
