"""Time integration of the linearized Cauchy problem and the quasilinear iteration.

All solvers integrate ``v_t = -i P v + i f`` (``D_t v + P v = f`` with
``D = -i d/dx``) on the solver nodes ``t_n = n dt``.  The leading part
``a3(t) D^3`` is x-independent and is removed exactly by an integrating factor;
the lower-order remainder is advanced with classical RK4 (Lawson's IFRK4).

The integral map is ``J(u)(t) = u(t) - g + i int_0^t (P_u u - f) ds``, its
derivative ``DJ(u) v = v + i int_0^t P~_u v ds`` uses the linearized zeroth-order
coefficient, and ``DJ(u) v = h`` is solved as the Cauchy problem
``v_t = -i P~_u v + h_t``, ``v(0) = h(0)``.
"""
import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline

from .evolution_model import (
    CoefficientRangeError,
    LinearizedCoefficients,
    _Dpow,
    apply_P,
    linearize,
)
from .fd import ladder_derivative
from .gevrey_weights import (
    build_Q,
    capital_lambda_multiplier,
    gevrey_step,
)
from .spectral_core import (
    GevreyIndex,
    GridFunction,
    GridMismatchError,
    bracket,
    gevrey_norm,
    gevrey_weights,
)

RK4_ENVELOPE = 2.8  # RK4 stability interval on the imaginary axis is 2 sqrt(2)
BLOWUP_FACTOR = 1e6
ZERO_TOL = 1e-14


class SolverInstabilityError(FloatingPointError):
    """Raised when one step exceeds ``BLOWUP_FACTOR`` times the largest norm seen so far."""


class StabilityEnvelopeError(ValueError):
    """Raised when ``dt`` exceeds the explicit stability envelope of the remainder."""


class NonContractionError(RuntimeError):
    """Raised when the quasilinear iteration stops contracting."""

    def __init__(self, message, residual_trace):
        super().__init__(message)
        self.residual_trace = list(residual_trace)


# ---------------------------------------------------------------------------
# containers


@dataclass(eq=False)
class Trajectory:
    """Samples ``values[n]`` of a grid function at increasing ``times[n]``."""

    grid: object
    times: np.ndarray
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.times = np.atleast_1d(np.asarray(self.times, dtype=float))
        self.values = np.asarray(self.values, dtype=complex).reshape(len(self.times), -1)
        if self.values.shape[1] != self.grid.N:
            raise GridMismatchError("trajectory samples do not match the grid")
        self._spline = None

    @classmethod
    def from_function(cls, grid, times, f):
        """Sample ``f(t)`` (returning a GridFunction or an array) at ``times``."""
        return cls(grid, times, [_as_values(f(t)) for t in np.atleast_1d(times)])

    @classmethod
    def constant(cls, u, times):
        return cls(u.grid, times, np.repeat(u.values[None, :], len(np.atleast_1d(times)), axis=0))

    def __len__(self):
        return len(self.times)

    def __getitem__(self, n):
        return GridFunction(self.grid, self.values[n])

    def __sub__(self, other):
        _check_nodes(self, other)
        return Trajectory(self.grid, self.times, self.values - other.values)

    def __add__(self, other):
        _check_nodes(self, other)
        return Trajectory(self.grid, self.times, self.values + other.values)

    def scaled(self, c):
        return Trajectory(self.grid, self.times, c * self.values)

    @property
    def final(self):
        return self[-1]

    @property
    def dt(self):
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def at(self, t):
        """Values at ``t``: the node sample when ``t`` is a node, else a cubic spline."""
        hit = np.nonzero(np.isclose(self.times, t, rtol=0.0, atol=1e-13))[0]
        if hit.size:
            return self.values[hit[0]]
        if len(self.times) == 1:
            return self.values[0]
        if self._spline is None:
            self._spline = CubicSpline(self.times, self.values, axis=0)
        return self._spline(t)

    def norms(self, idx, h=1.0):
        """``gevrey_norm`` at every node."""
        w = gevrey_weights(self.grid, idx, h)
        c = np.fft.fft(self.values, axis=1) / self.grid.N
        return np.sqrt(2.0 * self.grid.L * np.sum((w[None, :] * np.abs(c)) ** 2, axis=1))

    def sup_norm(self, idx, h=1.0):
        return float(np.max(self.norms(idx, h)))

    def time_derivative(self):
        """Fourth-order finite-difference ``d/dt`` on the nodes (one-sided at the ends)."""
        if len(self.times) < 6:
            raise ValueError("at least 6 nodes are needed for the time derivative")
        return Trajectory(self.grid, self.times, ladder_derivative(self.values, 1, self.dt, axis=0))


def _check_nodes(a, b):
    if a.grid != b.grid:
        raise GridMismatchError("trajectories live on different grids")
    if a.times.shape != b.times.shape or not np.allclose(a.times, b.times, rtol=0, atol=1e-13):
        raise ValueError("trajectories are sampled at different times")


def _as_values(v):
    return v.values if isinstance(v, GridFunction) else np.asarray(v, dtype=complex)


@dataclass(eq=False)
class CauchyData:
    """Initial datum ``g``, forcing ``f`` and horizon ``T``.

    ``f`` is ``None`` (no forcing), a callable ``t -> GridFunction | array`` or
    a :class:`Trajectory` (interpolated between its nodes).
    """

    g: GridFunction
    f: object = None
    T: float = 1.0

    def __post_init__(self):
        if self.T <= 0:
            raise ValueError("horizon T must be positive")
        if not np.all(np.isfinite(self.g.values)):
            raise ValueError("initial datum is not finite")
        if isinstance(self.f, Trajectory) and self.f.grid != self.g.grid:
            raise GridMismatchError("forcing and datum live on different grids")

    @property
    def grid(self):
        return self.g.grid

    def forcing(self, t):
        if self.f is None:
            return np.zeros(self.grid.N, dtype=complex)
        if isinstance(self.f, Trajectory):
            return self.f.at(t)
        return _as_values(self.f(t))

    def forcing_trajectory(self, times):
        return Trajectory(self.grid, times, [self.forcing(t) for t in times])

    def with_T(self, T):
        return replace(self, T=T)


@dataclass(frozen=True)
class SolveConfig:
    """Time stepping and norm bookkeeping.

    ``working_idx`` is the data index ``(m, rho, theta)``; ``delta`` is the
    working loss (``rho / 4`` when omitted) and ``deltas`` the losses traced in
    the report.  ``n_steps`` defaults to ``round(T / dt)``.
    """

    dt: float = 1e-3
    n_steps: int = None
    integrator: str = "IFRK4"
    working_idx: GevreyIndex = GevreyIndex(0.0, 0.5, 1.6)
    delta: float = None
    deltas: tuple = (0.05, 0.1, 0.2)
    conjugated: bool = False
    sobolev_m: float = None

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.integrator != "IFRK4":
            raise ValueError("only the IFRK4 integrator is available")
        rho = self.working_idx.rho
        if self.delta is None:
            object.__setattr__(self, "delta", rho / 4.0)
        for d in (self.delta,) + tuple(self.deltas):
            if rho > 0 and not 0 < d < rho:
                raise ValueError(f"loss delta = {d} must lie in (0, rho = {rho})")
        if self.sobolev_m is None:
            object.__setattr__(self, "sobolev_m", self.working_idx.m)

    def with_(self, **kw):
        return replace(self, **kw)

    def steps_for(self, T):
        n = self.n_steps if self.n_steps is not None else int(round(T / self.dt))
        if n < 1:
            raise ValueError("horizon shorter than one step")
        return n

    @property
    def residual_idx(self):
        """Index ``(m, rho - delta, theta)`` of the residual norms."""
        w = self.working_idx
        return GevreyIndex(w.m, max(w.rho - self.delta, 0.0), w.theta)


@dataclass(eq=False)
class SolveReport:
    """Solution trajectory and its norm traces.

    ``norm_traces`` maps column names (``sobolev_m``, ``gevrey@<rho - delta>``)
    to per-node norms; ``energy_ratio`` is :func:`verify_energy` at the working
    loss.  Conjugated runs also carry the transformed trajectory and its energy
    ratio; quasilinear runs carry ``residual_trace``.
    """

    trajectory: Trajectory
    norm_traces: dict
    energy_ratio: float
    residual_trace: list = field(default_factory=list)
    w_trajectory: Trajectory = None
    w_energy_ratio: float = None
    info: dict = field(default_factory=dict)

    @property
    def times(self):
        return self.trajectory.times

    def rows(self):
        """Rows ``(t, columns...)`` for CSV output; the residual column is per iteration."""
        names = list(self.norm_traces)
        out = []
        for n, t in enumerate(self.times):
            row = {"t": float(t)}
            row.update({k: float(self.norm_traces[k][n]) for k in names})
            if self.residual_trace:
                row["residual"] = float(self.residual_trace[-1])
            out.append(row)
        return out

    def to_csv(self, path, header=None):
        write_csv(path, self.rows(), header)


def write_csv(path, rows, header=None):
    """CSV with a ``# {json}`` header line holding the run configuration."""
    cols = list(rows[0]) if rows else []
    with open(path, "w", newline="") as fh:
        if header is not None:
            fh.write("# " + json.dumps(header, sort_keys=True, default=_json_default) + "\n")
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def _cell(text):
    if text in ("True", "False"):
        return text == "True"
    for kind in (int, float):
        try:
            return kind(text)
        except ValueError:
            pass
    return text


def read_csv(path):
    """Inverse of :func:`write_csv`: returns ``(header, rows)`` with numeric cells parsed."""
    header = None
    with open(path) as fh:
        first = fh.readline()
        if first.startswith("# "):
            header = json.loads(first[2:])
        else:
            fh.seek(0)
        rows = [{k: _cell(v) for k, v in r.items()} for r in csv.DictReader(fh)]
    return header, rows


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    return str(o)


# ---------------------------------------------------------------------------
# quadrature


def cumulative_quadrature(values, dt):
    """``int_0^{t_n}`` of node samples (axis 0) with a fourth-order cubic rule.

    Each interval uses the cubic through four neighbouring nodes (shifted
    inward at the ends); fewer than four nodes fall back to the trapezoid rule.
    """
    f = np.asarray(values)
    n = f.shape[0]
    out = np.zeros(f.shape, dtype=np.result_type(f.dtype, float))
    if n < 2:
        return out
    if n < 4:
        pieces = 0.5 * dt * (f[1:] + f[:-1])
    else:
        pieces = np.empty((n - 1,) + f.shape[1:], dtype=out.dtype)
        pieces[0] = dt / 24.0 * (9 * f[0] + 19 * f[1] - 5 * f[2] + f[3])
        pieces[1:-1] = dt / 24.0 * (-f[:-3] + 13 * f[1:-2] + 13 * f[2:-1] - f[3:])
        pieces[-1] = dt / 24.0 * (f[-4] - 5 * f[-3] + 19 * f[-2] + 9 * f[-1])
    out[1:] = np.cumsum(pieces, axis=0)
    return out


# ---------------------------------------------------------------------------
# the integrator


class _LeadingPhase:
    """``A(t) = int_0^t a3`` (exact for constant ``a3``, Gauss-Legendre otherwise)."""

    def __init__(self, model):
        self.model = model
        self.constant = not callable(model.a3)
        self._cache = {0.0: 0.0}

    def __call__(self, t):
        if self.constant:
            return self.model.a3 * t
        t = float(t)
        if t not in self._cache:
            prev = max(s for s in self._cache if s <= t)
            piece = integrate.fixed_quad(np.vectorize(self.model.a3_at), prev, t, n=8)[0]
            self._cache[t] = self._cache[prev] + piece
        return self._cache[t]


def ifrk4(grid, phase, rhs, v0, times):
    """Lawson RK4 for ``v_t = -i a3(t) D^3 v + rhs(t, v)``.

    ``phase(t) = int_0^t a3``; ``rhs`` maps ``(t, values)`` to values.  The
    Nyquist mode is kept at zero.  Returns the node samples.
    """
    xi3 = grid.xi_fft ** 3
    keep = np.ones(grid.N)
    keep[grid.nyquist_fft] = 0.0

    def to_v(t, V):
        return np.fft.ifft(np.exp(-1j * phase(t) * xi3) * V)

    def F(t, V):
        return np.exp(1j * phase(t) * xi3) * np.fft.fft(rhs(t, to_v(t, V))) * keep

    out = np.empty((len(times), grid.N), dtype=complex)
    V = np.fft.fft(v0) * keep
    peak = np.linalg.norm(V)
    out[0] = to_v(times[0], V)
    for n in range(len(times) - 1):
        t, dt = times[n], times[n + 1] - times[n]
        k1 = F(t, V)
        k2 = F(t + dt / 2, V + dt / 2 * k1)
        k3 = F(t + dt / 2, V + dt / 2 * k2)
        k4 = F(t + dt, V + dt * k3)
        Vn = V + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        after = np.linalg.norm(Vn)
        if not np.isfinite(after) or (peak > 0 and after > BLOWUP_FACTOR * peak):
            raise SolverInstabilityError(
                f"norm grew from {peak:.3e} to {after:.3e} in the step at t = {t:.6g}")
        peak = max(peak, after)
        V = Vn
        out[n + 1] = to_v(times[n + 1], V)
    return out


def _times(cfg, T):
    n = cfg.steps_for(T)
    return np.linspace(0.0, n * cfg.dt, n + 1)


def _coefficient_source(model, u_freeze, times, a0_tilde):
    """Return ``coeffs(t, v) -> (a0, a1, a2)`` for a freezing choice.

    ``u_freeze`` is ``None`` (``u = 0``), ``"self"`` (coefficients at the
    current state, i.e. the nonlinear equation), a GridFunction (constant in
    time), a Trajectory or a :class:`LinearizedCoefficients`.
    """
    grid = model.grid
    if isinstance(u_freeze, str):
        if u_freeze != "self":
            raise ValueError("u_freeze must be None, 'self', a GridFunction or a Trajectory")
        return lambda t, v: tuple(_coef(model, j, t, v) for j in range(3))
    if u_freeze is None:
        u_freeze = GridFunction.zeros(grid)
    if isinstance(u_freeze, GridFunction):
        lin = linearize(model, [u_freeze])
    elif isinstance(u_freeze, Trajectory):
        lin = linearize(model, u_freeze.values, u_freeze.times)
    elif isinstance(u_freeze, LinearizedCoefficients):
        lin = u_freeze
    else:
        raise TypeError(f"cannot freeze coefficients along {type(u_freeze).__name__}")
    if lin.model.grid != grid:
        raise GridMismatchError("frozen trajectory lives on another grid")

    def coeffs(t, v):
        u = lin.u_at(t)
        out = [_coef(model, j, t, u) for j in range(3)]
        if a0_tilde:
            out[0] = lin.a0_tilde(t) if model.terms[0] is not None or not model.is_linear else out[0]
        return tuple(out)

    return coeffs


def _coef(model, j, t, u):
    if model.terms[j] is None:
        return 0.0
    return model.coefficient(j, t, u)


def _lower_order(grid, coeffs, v):
    """``sum_j a_j D^j v`` for ``j <= 2``."""
    vh = np.fft.fft(v)
    vh[grid.nyquist_fft] = 0.0
    xi = grid.xi_fft
    out = np.zeros(grid.N, dtype=complex)
    for j, a in enumerate(coeffs):
        if np.any(a != 0):
            out = out + a * np.fft.ifft(xi ** j * vh)
    return out


def _envelope(grid, coeffs_list):
    xm = np.max(np.abs(grid.xi))
    return max(sum(np.max(np.abs(a)) * xm ** j for j, a in enumerate(c)) for c in coeffs_list)


def _check_envelope(dt, rate, extra=0.0):
    if dt * (rate + extra) > RK4_ENVELOPE:
        raise StabilityEnvelopeError(
            f"dt * spectral radius of the explicit part = {dt * (rate + extra):.3f} exceeds "
            f"{RK4_ENVELOPE}; reduce dt below {RK4_ENVELOPE / (rate + extra):.3e}")


def _sample_coeffs(coeffs, times, v):
    picks = np.unique(np.linspace(0, len(times) - 1, min(len(times), 11)).astype(int))
    return [coeffs(times[i], v) for i in picks]


def solve_linear(model, u_freeze, data, cfg, a0_tilde=False):
    """Integrate ``v_t = -i (a3 D^3 + sum_j a_j D^j) v + i f`` with IFRK4.

    Parameters
    ----------
    model : CoefficientModel
    u_freeze : None, "self", GridFunction, Trajectory or LinearizedCoefficients
        Where the coefficients are evaluated (see ``_coefficient_source``).
    data : CauchyData
    cfg : SolveConfig
    a0_tilde : bool
        Use the linearized zeroth-order coefficient (the operator of ``DJ``).
    """
    grid = model.grid
    if data.grid != grid:
        raise GridMismatchError("data and model live on different grids")
    times = _times(cfg, data.T)
    coeffs = _coefficient_source(model, u_freeze, times, a0_tilde)
    _check_envelope(cfg.dt, _envelope(grid, _sample_coeffs(coeffs, times, data.g.values)))

    def rhs(t, v):
        return -1j * _lower_order(grid, coeffs(t, v), v) + 1j * data.forcing(t)

    vals = ifrk4(grid, _LeadingPhase(model), rhs, data.g.values, times)
    traj = Trajectory(grid, times, vals)
    return _report(traj, data, cfg)


def solve_conjugated(model, u_freeze, data, cfg, params, a0_tilde=False):
    """Solve through ``w = Q v`` with dense realisations of the change of variables.

    ``w_t = Q(-i P v + i f) - k <D>_h^(2(1-sigma)) w`` is integrated with the
    same IFRK4 scheme (the leading ``a3 D^3`` commutes with ``exp(Lambda)(t, D)``)
    and pulled back by ``v = Q^-1 w`` at every node.
    """
    grid = model.grid
    if data.grid != grid:
        raise GridMismatchError("data and model live on different grids")
    times = _times(cfg, data.T)
    params = params.with_(sigma=model.sigma, T=max(params.T, times[-1]))
    qop = build_Q(grid, 0.0, params, model.sign_a3)[2]
    E, Einv = qop.e_inverse.forward, qop.e_inverse.matrix
    coeffs = _coefficient_source(model, u_freeze, times, a0_tilde)
    xi = grid.xi_fft
    xi3 = xi ** 3
    drift = params.k * bracket(xi, params.h) ** (2.0 * (1.0 - params.sigma))
    drift[grid.nyquist_fft] = 0.0
    phase = _LeadingPhase(model)
    mult = {}

    def lam(t, sign):
        key = (t, sign)
        if key not in mult:
            if len(mult) > 64:
                mult.clear()
            mult[key] = capital_lambda_multiplier(grid, t, params, sign)
        return mult[key]

    def Q(t, v):
        return np.fft.ifft(lam(t, 1.0) * np.fft.fft(E @ v))

    def Qinv(t, w):
        return Einv @ np.fft.ifft(lam(t, -1.0) * np.fft.fft(w))

    def rhs(t, w):
        v = Qinv(t, w)
        a3 = model.a3_at(t)
        Pv = a3 * _Dpow(v, grid, 3) + _lower_order(grid, coeffs(t, v), v)
        wh = np.fft.fft(w)
        stiff = np.fft.ifft(1j * a3 * xi3 * wh)  # removes -i a3 D^3 w (handled exactly)
        return Q(t, -1j * Pv + 1j * data.forcing(t)) + stiff - np.fft.ifft(drift * wh)

    lam2_rate = 3.0 * abs(model.a3_max) * np.max(np.abs(grid.xi)) ** 2 * (params.M2 + params.M1)
    rate = _envelope(grid, _sample_coeffs(coeffs, times, data.g.values)) + lam2_rate + drift.max()
    _check_envelope(cfg.dt, rate)

    w0 = Q(0.0, data.g.values)
    wvals = ifrk4(grid, phase, rhs, w0, times)
    vvals = np.array([Qinv(t, w) for t, w in zip(times, wvals)])
    traj = Trajectory(grid, times, vvals)
    wtraj = Trajectory(grid, times, wvals)
    fQ = Trajectory(grid, times, [Q(t, data.forcing(t)) for t in times])
    rep = _report(traj, data, cfg)
    rep.w_trajectory = wtraj
    rep.w_energy_ratio = _energy_ratio(
        wtraj.norms(GevreyIndex(cfg.sobolev_m, 0.0, cfg.working_idx.theta)),
        gevrey_norm(GridFunction(grid, w0), GevreyIndex(cfg.sobolev_m, 0.0, cfg.working_idx.theta)),
        fQ.norms(GevreyIndex(cfg.sobolev_m, 0.0, cfg.working_idx.theta)), cfg.dt)
    rep.info.update(M2=params.M2, M1=params.M1, k=params.k, h0=params.h, rho_prime=params.rho_prime,
                    r_norm=qop.e_inverse.r_norm)
    return rep


# ---------------------------------------------------------------------------
# energy bookkeeping


def _delta_key(cfg, d):
    return f"gevrey@{cfg.working_idx.rho - d:g}"


def _report(traj, data, cfg):
    w = cfg.working_idx
    traces = {"sobolev_m": traj.norms(GevreyIndex(cfg.sobolev_m, 0.0, w.theta))}
    for d in cfg.deltas:
        if w.rho > d:
            traces[_delta_key(cfg, d)] = traj.norms(GevreyIndex(w.m, w.rho - d, w.theta))
    ratio = verify_energy_trajectory(traj, data, w, cfg.delta)
    return SolveReport(traj, traces, ratio)


def _energy_ratio(lhs_norms, g_norm, f_norms, dt, tol=ZERO_TOL):
    lhs = np.asarray(lhs_norms) ** 2
    rhs = g_norm ** 2 + cumulative_quadrature(np.asarray(f_norms) ** 2, dt)
    live = rhs > 0.0
    if np.any(~live & (lhs > tol ** 2)):
        return np.inf  # positive norm with vanishing data
    if not np.any(live):
        return 0.0
    return float(np.max(lhs[live] / rhs[live]))


def verify_energy_trajectory(traj, data, idx, delta):
    """Energy ratio of a trajectory (see :func:`verify_energy`)."""
    loss = GevreyIndex(idx.m, max(idx.rho - delta, 0.0), idx.theta)
    f_norms = data.forcing_trajectory(traj.times).norms(idx) if data.f is not None else np.zeros(len(traj))
    return _energy_ratio(traj.norms(loss), gevrey_norm(data.g, idx), f_norms, traj.dt)


def verify_energy(report, data, idx, delta):
    """Measured constant ``sup_t ||v(t)||^2_{m, rho-delta} / (||g||^2_{m, rho} + int_0^t ||f||^2_{m, rho})``.

    Zero data give 0; a positive left side over a vanishing right side gives
    ``inf`` (an estimate violation).
    """
    if not 0 < delta < idx.rho:
        raise ValueError("delta must lie in (0, rho)")
    return verify_energy_trajectory(report.trajectory, data, idx, delta)


# ---------------------------------------------------------------------------
# the integral map and its derivative


def _traj_of(u):
    if isinstance(u, Trajectory):
        return u
    raise TypeError("expected a Trajectory")


def residual_J(model, u_traj, data):
    """``J(u)(t_n) = u(t_n) - g + i int_0^{t_n} (P_u u - f) ds`` on the trajectory nodes."""
    u = _traj_of(u_traj)
    grid = model.grid
    integrand = np.empty_like(u.values)
    for n, t in enumerate(u.times):
        un = u[n]
        integrand[n] = apply_P(model, un, un, t).values - data.forcing(t)
    vals = u.values - data.g.values[None, :] + 1j * cumulative_quadrature(integrand, u.dt)
    return Trajectory(grid, u.times, vals)


def apply_DJ(model, u_traj, v_traj):
    """``DJ(u) v = v + i int_0^t P~_u v ds`` with the linearized zeroth-order coefficient."""
    u, v = _traj_of(u_traj), _traj_of(v_traj)
    _check_nodes(u, v)
    lin = linearize(model, u.values, u.times)
    grid = model.grid
    integrand = np.empty_like(v.values)
    for n, t in enumerate(u.times):
        a0, a1, a2 = lin.coefficients(t, tilde=True)
        integrand[n] = (model.a3_at(t) * _Dpow(v.values[n], grid, 3)
                        + _lower_order(grid, (a0, a1, a2), v.values[n]))
    return Trajectory(grid, v.times, v.values + 1j * cumulative_quadrature(integrand, v.dt))


def solve_DJ(model, u_traj, h_traj, cfg, params=None):
    """Solve ``DJ(u) v = h``: ``v_t = -i P~_u v + h_t``, ``v(0) = h(0)``.

    ``h_t`` is the fourth-order finite difference on the nodes.  With
    ``cfg.conjugated`` and ``params`` the problem is solved through the change
    of variables, otherwise directly.
    """
    u, h = _traj_of(u_traj), _traj_of(h_traj)
    _check_nodes(u, h)
    grid = model.grid
    if not np.any(h.values):
        return Trajectory(grid, h.times, np.zeros_like(h.values))
    lin = linearize(model, u.values, u.times)
    ht = h.time_derivative()
    forcing = Trajectory(grid, ht.times, -1j * ht.values)  # i f = h_t
    data = CauchyData(h[0], forcing, float(h.times[-1]))
    sub = cfg.with_(dt=h.dt, n_steps=len(h.times) - 1)
    if cfg.conjugated and params is not None:
        rep = solve_conjugated(model, lin, data, sub, params, a0_tilde=True)
    else:
        rep = solve_linear(model, lin, data, sub, a0_tilde=True)
    return rep.trajectory


def taylor_seed(model, data, times):
    """``w(t) = g - i t (P_g(0) g - f(0))``, the first-order expansion of the solution."""
    g = data.g
    slope = apply_P(model, g, g, 0.0).values - data.forcing(0.0)
    times = np.asarray(times, dtype=float)
    return Trajectory(model.grid, times, g.values[None, :] - 1j * times[:, None] * slope[None, :])


def mollify_residual(j_traj, eps, mu=1.5):
    """``phi(t) = int_0^t rho(s / eps) d_t J(s) ds`` with a smooth cutoff vanishing on ``[0, 1]``.

    ``rho`` rises from 0 at ``s = eps`` to 1 at ``s = 2 eps``; ``phi`` is
    therefore identically zero up to ``t = eps``.
    """
    j = _traj_of(j_traj)
    if not 0 < eps < 0.5 * j.times[-1]:
        raise ValueError("eps must lie in (0, T/2)")
    cut = gevrey_step(j.times / eps - 1.0, mu)
    integrand = cut[:, None] * j.time_derivative().values
    phi = cumulative_quadrature(integrand, j.dt)
    phi[j.times <= eps] = 0.0  # the integrand vanishes identically there
    return Trajectory(j.grid, j.times, phi)


def solve_quasilinear(model, data, cfg, params=None, max_iters=10, tol=1e-8, bisect=True,
                      min_T=None):
    """Newton iteration ``u <- u - S(u, J(u))`` from the Taylor seed.

    Stops once the sup-node residual in the index ``cfg.residual_idx`` is below
    ``tol``.  When the residual stops decreasing (or leaves the coefficient
    range) the horizon is halved, down to ``min_T``; the report's ``info``
    holds the horizon ``T_star`` that succeeded.
    """
    min_T = data.T / 16.0 if min_T is None else min_T
    T = data.T
    failures = []
    while True:
        try:
            rep = _newton(model, data.with_T(T), cfg, params, max_iters, tol)
            rep.info.update(T_star=T, failed_horizons=failures)
            return rep
        except NonContractionError as err:
            failures.append((T, err.residual_trace))
            if not bisect or T / 2.0 < min_T or cfg.steps_for(T / 2.0) < 6:
                raise NonContractionError(
                    f"no contraction down to T = {T:g}: {err}", err.residual_trace) from None
            T /= 2.0


def _newton(model, data, cfg, params, max_iters, tol):
    times = _times(cfg, data.T)
    idx = cfg.residual_idx
    box = np.concatenate([data.g.values, data.forcing(0.0)])
    m = model.with_compact(box)
    u = taylor_seed(m, data, times)
    trace = []
    for it in range(max_iters + 1):
        try:
            r = residual_J(m, u, data)
        except CoefficientRangeError as err:
            raise NonContractionError(f"iterate left the coefficient range: {err}", trace) from None
        trace.append(r.sup_norm(idx))
        if not np.isfinite(trace[-1]):
            raise NonContractionError("residual is not finite", trace)
        if trace[-1] <= tol:
            break
        if it == max_iters:
            raise NonContractionError(f"residual {trace[-1]:.3e} above tol after {max_iters} steps", trace)
        if it > 0 and trace[-1] >= trace[-2]:
            raise NonContractionError(
                f"residual rose from {trace[-2]:.3e} to {trace[-1]:.3e}", trace)
        try:
            u = u - solve_DJ(m, u, r, cfg, params)
        except (SolverInstabilityError, CoefficientRangeError) as err:
            raise NonContractionError(str(err), trace) from None
    rep = _report(u, data, cfg)
    rep.residual_trace = trace
    rep.info.update(iterations=len(trace) - 1)
    return rep


# ---------------------------------------------------------------------------
# loss of regularity


@dataclass
class RegularityTable:
    """Paired runs: direct Sobolev growth against the weighted-energy bound.

    ``sobolev`` is ``||v(t)||_{H^m}`` of the direct solve; ``gevrey`` its
    ``H^m_{rho - delta; theta}`` norm; ``bound`` the right side
    ``C_w ||Q^-1||^2 ||Q(0)||^2 (||g||^2_{m, rho} + ...)`` built from the
    conjugated run (square roots are reported).
    """

    times: np.ndarray
    sobolev: np.ndarray
    gevrey: np.ndarray
    bound: np.ndarray
    w_energy_ratio: float
    q_norms: tuple

    @property
    def growth_factor(self):
        return float(self.sobolev[-1] / self.sobolev[0])

    @property
    def within_bound(self):
        return bool(np.all(self.gevrey <= self.bound * (1.0 + 1e-9)))

    def rows(self):
        return [dict(t=float(t), sobolev_m=float(s), gevrey=float(g), bound=float(b))
                for t, s, g, b in zip(self.times, self.sobolev, self.gevrey, self.bound)]


def _weighted_norm(grid, op, target_idx, source_idx, h):
    """``||W_target op W_source^-1||_2`` for Gevrey weights with bracket ``h``."""
    from .psdo_calculus import multiplier_matrix
    keep = np.ones(grid.N, dtype=bool)
    keep[grid.nyquist_fft] = False
    target = gevrey_weights(grid, target_idx, h)
    source = gevrey_weights(grid, source_idx, h)
    inv_source = np.where(keep, 1.0 / np.where(keep, source, 1.0), 0.0)
    return float(np.linalg.norm(multiplier_matrix(grid, target) @ op @ multiplier_matrix(grid, inv_source), 2))


def paired_regularity_run(model, data, cfg, params, delta=None, n_samples=11):
    """Direct solve and conjugated solve of the same linear problem.

    The bound on ``||v(t)||_{m, rho' - delta}`` uses only the conjugated run:
    ``||Q(t)^-1||_{H^m -> H^m_{rho' - delta}} ||w(t)||`` with
    ``||w(t)||^2 <= C_w (||Q(0) g||^2 + int ||Q f||^2)`` and
    ``||Q(0) g|| <= ||Q(0)||_{H^m_rho -> H^m} ||g||_{m, rho}``.  The inverse norm
    is nondecreasing in ``t`` and is taken at the next of ``n_samples`` times.
    """
    from .psdo_calculus import multiplier_matrix
    params = params.with_(sigma=model.sigma, T=max(params.T, data.T))
    delta = cfg.delta if delta is None else delta
    idx = cfg.working_idx
    if not 0 < delta < params.rho_prime:
        raise ValueError("delta must lie in (0, rho')")
    if data.f is not None:
        raise ValueError("the paired run compares homogeneous problems")
    direct = solve_linear(model, None, data, cfg)
    conj = solve_conjugated(model, None, data, cfg, params)
    grid = model.grid
    h = params.h
    qop = build_Q(grid, 0.0, params, model.sign_a3)[2]
    sob_idx = GevreyIndex(idx.m, 0.0, idx.theta)
    loss = GevreyIndex(idx.m, params.rho_prime - delta, idx.theta)
    fwd = _weighted_norm(grid, qop.forward, sob_idx, idx, h)
    times = direct.times
    picks = np.linspace(times[0], times[-1], n_samples)
    inv_at = np.array([_weighted_norm(
        grid, qop.e_inverse.matrix @ multiplier_matrix(grid, capital_lambda_multiplier(grid, t, params, -1.0)),
        loss, sob_idx, h) for t in picks])
    inv = inv_at[np.minimum(np.searchsorted(picks, times - 1e-12), n_samples - 1)]
    bound = inv * fwd * gevrey_norm(data.g, idx, h) * np.sqrt(conj.w_energy_ratio)
    gev = direct.trajectory.norms(loss, h)
    sob = direct.trajectory.norms(GevreyIndex(cfg.sobolev_m, 0.0, idx.theta))
    return RegularityTable(times, sob, gev, bound, conj.w_energy_ratio, (fwd, float(inv_at.max())))
