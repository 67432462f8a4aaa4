"""Batch driver: configuration files, presets, verification suites, sweeps and CSV output.

Configurations are flat ``section.key = value`` files (TOML dotted keys)::

    preset = "linear-gevrey"
    grid.L = 40.0
    grid.N = 256
    weights.sigma = 0.75
    solve.dt = 0.001

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""
import argparse
import dataclasses
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from . import BACKEND, __version__
from .cauchy_solver import (
    CauchyData,
    NonContractionError,
    SolveConfig,
    SolverInstabilityError,
    StabilityEnvelopeError,
    solve_conjugated,
    solve_linear,
    solve_quasilinear,
    verify_energy,
    write_csv,
)
from .evolution_model import (
    CoefficientModel,
    CoefficientRangeError,
    CoefficientTerm,
    ConstantSelectionError,
    EntireFunction,
    assemble_conjugated,
    choose_constants,
    coefficient_derivative_bound_check,
    constant_profile,
    decay_profile,
    kdv_soliton,
    necessary_condition_scan,
    neccond_model,
    preset,
)
from .gevrey_weights import (
    InversionDivergenceError,
    WeightParams,
    inverse_residual_matrix,
    verify_lambda_estimates,
)
from .psdo_calculus import DenseSizeError, estimate_seminorm
from .spectral_core import (
    GevreyIndex,
    GridFunction,
    GridSpec,
    MultiplierOverflowError,
    fourier_multiplier,
)

PRESET_NAMES = ("kdv", "kdvb", "linear-gevrey", "mixed", "neccond", "custom")
DATA_KINDS = ("zero", "gauss", "sech2", "soliton", "cos2")
SOLVE_MODES = ("linear", "nonlinear", "conjugated", "quasilinear")
GEVREY_BOUNDED = 1e3  # growth factor above which a sweep row is flagged unbounded
SUITES = ("weights", "calculus", "energy", "faadibruno", "neccond")
NUMERICAL_ERRORS = (SolverInstabilityError, StabilityEnvelopeError, NonContractionError,
                    InversionDivergenceError, ConstantSelectionError, CoefficientRangeError,
                    MultiplierOverflowError, DenseSizeError, FloatingPointError,
                    np.linalg.LinAlgError)


class ConfigError(ValueError):
    """Invalid configuration; the message names the line and field."""


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class GridSection:
    L: float = 40.0
    N: int = 256


@dataclass(frozen=True)
class WeightsSection:
    sigma: float = 0.75
    theta: float = 1.6
    mu: float = None
    M2: float = 1.0
    M1: float = 1.0
    k: float = 1.0
    h: float = 4.0
    rho_prime: float = 0.5
    deltas: tuple = (0.05, 0.1, 0.2)
    auto: bool = False


@dataclass(frozen=True)
class ModelSection:
    a3: float = -1.0
    amplitude: float = 0.5
    s: float = 0.75
    b: float = -0.05
    c: float = 1.0
    a: float = 1.0
    kappa: float = 1.0
    theta0: float = 1.5
    a0: tuple = (0.0, 0.0)
    a1: tuple = (0.0, 0.0)
    a2: tuple = (0.0, 0.5)
    a0_decay: float = 0.0
    a1_decay: float = 0.375
    a2_decay: float = 0.75
    a0_b: tuple = (1.0,)
    a1_b: tuple = (1.0,)
    a2_b: tuple = (1.0,)
    a0_b_kind: str = "poly"
    a1_b_kind: str = "poly"
    a2_b_kind: str = "poly"


@dataclass(frozen=True)
class DataSection:
    kind: str = "gauss"
    amplitude: float = 1.0
    width: float = 1.0


@dataclass(frozen=True)
class SolveSection:
    T: float = 1.0
    dt: float = 1e-3
    mode: str = "linear"
    tol: float = 1e-8
    max_iters: int = 10
    m: float = 0.0
    rho: float = 0.5


@dataclass(frozen=True)
class NeccondSection:
    L: float = 1.0e7
    N: int = 256
    rho_min: float = 10.0
    rho_max: float = 1.0e6
    n_rho: int = 16


@dataclass(frozen=True)
class ExperimentConfig:
    """A complete experiment description (see the module docstring for the file format)."""

    preset: str = "linear-gevrey"
    seed: int = 0
    grid: GridSection = field(default_factory=GridSection)
    weights: WeightsSection = field(default_factory=WeightsSection)
    model: ModelSection = field(default_factory=ModelSection)
    data: DataSection = field(default_factory=DataSection)
    solve: SolveSection = field(default_factory=SolveSection)
    neccond: NeccondSection = field(default_factory=NeccondSection)

    def flat(self):
        """``{dotted key: value}`` without unset optional entries."""
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if dataclasses.is_dataclass(v):
                for g in fields(v):
                    val = getattr(v, g.name)
                    if val is not None:
                        out[f"{f.name}.{g.name}"] = val
            else:
                out[f.name] = v
        return out

    def with_value(self, key, value):
        """Copy with one dotted key replaced (value coerced to the field type)."""
        return _build(dict(self.flat(), **{key: value}), {})

    def weight_params(self):
        w = self.weights
        return WeightParams(sigma=w.sigma, theta=w.theta, mu=w.mu, M2=w.M2, M1=w.M1, k=w.k, h=w.h,
                            rho_prime=w.rho_prime, T=self.solve.T)

    def solve_config(self):
        s = self.solve
        return SolveConfig(dt=s.dt, working_idx=GevreyIndex(s.m, s.rho, self.weights.theta),
                           deltas=tuple(self.weights.deltas), conjugated=s.mode == "conjugated",
                           sobolev_m=s.m)


def _section_types():
    return {f.name: f.default_factory for f in fields(ExperimentConfig) if f.default_factory is not dataclasses.MISSING}


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (tuple, list)):
        return "[" + ", ".join(_format_value(x) for x in v) + "]"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialize_config(cfg):
    """Flat text form; ``parse_config(serialize_config(c)) == c``."""
    return "".join(f"{k} = {_format_value(v)}\n" for k, v in cfg.flat().items())


def _line_of(text, key):
    pat = re.compile(r"^\s*" + re.escape(key).replace(r"\.", r"\s*\.\s*") + r"\s*=")
    for n, line in enumerate(text.splitlines(), 1):
        if pat.match(line):
            return n
    return None


def _where(text, key):
    n = _line_of(text, key) if text else None
    return f"line {n}: {key}" if n else key


def _flatten(tree, prefix=""):
    out = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            if prefix:
                raise ConfigError(f"{key}: nesting deeper than section.key is not allowed")
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(value, default, key):
    kind = type(default)
    if default is None:
        kind = float
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true or false, got {value!r}")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    if kind is tuple:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            value = (value,)
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return tuple(_coerce(v, 0.0, key) for v in value)
    raise ConfigError(f"{key}: unsupported value {value!r}")


def _build(flat, text):
    sections = _section_types()
    top = {}
    parts = {name: {} for name in sections}
    top_defaults = {f.name: f.default for f in fields(ExperimentConfig) if f.name not in sections}
    for key, value in flat.items():
        where = _where(text, key)
        if "." in key:
            sec, name = key.split(".", 1)
            if sec not in sections:
                raise ConfigError(f"{where}: unknown section {sec!r}")
            defaults = {f.name: f.default for f in fields(sections[sec]())}
            if name not in defaults:
                raise ConfigError(f"{where}: unknown key {name!r} in section {sec!r}")
            parts[sec][name] = _coerce(value, defaults[name], where)
        else:
            if key not in top_defaults:
                raise ConfigError(f"{where}: unknown key")
            top[key] = _coerce(value, top_defaults[key], where)
    cfg = ExperimentConfig(**top, **{sec: replace(sections[sec](), **vals) for sec, vals in parts.items()})
    _validate(cfg, text)
    return cfg


def _validate(cfg, text):
    def fail(key, msg):
        raise ConfigError(f"{_where(text, key)}: {msg}")

    if cfg.preset not in PRESET_NAMES:
        fail("preset", f"unknown preset {cfg.preset!r}; choose from {', '.join(PRESET_NAMES)}")
    if cfg.data.kind not in DATA_KINDS:
        fail("data.kind", f"unknown data kind {cfg.data.kind!r}; choose from {', '.join(DATA_KINDS)}")
    if cfg.solve.mode not in SOLVE_MODES:
        fail("solve.mode", f"unknown mode {cfg.solve.mode!r}; choose from {', '.join(SOLVE_MODES)}")
    for key in ("grid.L", "solve.T", "solve.dt", "solve.tol", "neccond.L", "data.width"):
        sec, name = key.split(".")
        if not getattr(getattr(cfg, sec), name) > 0:
            fail(key, "must be positive")
    for key, (sec, name) in (("grid.N", ("grid", "N")), ("neccond.N", ("neccond", "N"))):
        n = getattr(getattr(cfg, sec), name)
        if n < 8 or n % 2:
            fail(key, "must be an even integer >= 8")
    if cfg.solve.max_iters < 0:
        fail("solve.max_iters", "must be nonnegative")
    if cfg.model.a3 == 0:
        fail("model.a3", "leading coefficient must be nonzero")
    try:
        cfg.weight_params()
    except ValueError as err:
        msg = str(err)
        name = next((n for n in ("sigma", "theta", "mu", "M2", "M1", "k", "rho_prime", "h") if msg.startswith(n)
                     or f" {n} " in f" {msg} "), "sigma")
        fail(f"weights.{name}", msg)
    for d in cfg.weights.deltas:
        if not 0 < d < cfg.solve.rho:
            fail("weights.deltas", f"each loss must lie in (0, solve.rho = {cfg.solve.rho}), got {d}")
    for j in range(3):
        kind = getattr(cfg.model, f"a{j}_b_kind")
        if kind not in ("poly", "exp"):
            fail(f"model.a{j}_b_kind", "must be 'poly' or 'exp'")
        if len(getattr(cfg.model, f"a{j}")) != 2:
            fail(f"model.a{j}", "expected [real, imag]")


def parse_config(text):
    """Parse configuration text into an :class:`ExperimentConfig`."""
    try:
        tree = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"syntax error: {err}") from None
    return _build(_flatten(tree), text)


def load_config(path):
    if path is None:
        return ExperimentConfig()
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError(f"cannot read {path}: {err}") from None
    return parse_config(text)


# ---------------------------------------------------------------------------
# builders


def build_model(cfg, grid=None):
    grid = GridSpec(cfg.grid.L, cfg.grid.N) if grid is None else grid
    m = cfg.model
    T = cfg.solve.T
    sig = cfg.weights.sigma
    if cfg.preset == "kdv":
        return preset("kdv", grid, c=m.c, sigma=sig, theta0=m.theta0, T=T)
    if cfg.preset == "kdvb":
        return preset("kdvb", grid, c=m.c, b=m.b, a=m.a, sigma=sig, theta0=m.theta0, T=T)
    if cfg.preset == "linear-gevrey":
        return preset("linear-gevrey", grid, amplitude=m.amplitude, s=m.s, a3=m.a3, sigma=sig,
                      theta0=m.theta0, T=T)
    if cfg.preset == "mixed":
        return preset("mixed", grid, sigma=sig, theta0=m.theta0, T=T)
    if cfg.preset == "neccond":
        return preset("neccond", grid, s=m.s, a3=m.a3, sigma=sig, T=T)
    terms = []
    for j in range(3):
        amp = complex(*getattr(m, f"a{j}"))
        if amp == 0:
            terms.append(None)
            continue
        decay = getattr(m, f"a{j}_decay")
        coeffs = getattr(m, f"a{j}_b")
        b = (EntireFunction.poly(*coeffs) if getattr(m, f"a{j}_b_kind") == "poly"
             else EntireFunction.exp(*coeffs[:2]))
        profile = decay_profile(decay, grid.L) if decay > 0 else constant_profile
        terms.append(CoefficientTerm(amp, profile, b, decay))
    return CoefficientModel(grid, m.a3, tuple(terms), sig, m.theta0, T=T, name="custom")


def build_data(cfg, grid):
    d = cfg.data
    x = grid.x
    if d.kind == "zero":
        g = np.zeros(grid.N)
    elif d.kind == "gauss":
        g = d.amplitude * np.exp(-(x / d.width) ** 2)
    elif d.kind == "sech2":
        g = d.amplitude / np.cosh(x / d.width) ** 2
    elif d.kind == "cos2":
        g = d.amplitude * np.cos(np.pi * x / (2 * grid.L)) ** 2
    else:
        if cfg.preset != "kdv":
            raise ConfigError("data.kind: soliton data need the kdv preset")
        return CauchyData(_soliton(cfg, grid, 0.0), None, cfg.solve.T)
    return CauchyData(GridFunction(grid, g + 0j), None, cfg.solve.T)


def _soliton(cfg, grid, t):
    return kdv_soliton(grid, t, kappa=cfg.model.kappa, c=cfg.model.c)


def _params(cfg, model, u):
    params = cfg.weight_params()
    constants = {}
    if cfg.weights.auto:
        ch = choose_constants(model, u, params)
        params = ch.params(params)
        constants = dict(C_omega=ch.C_omega, C_omega_lambda2=ch.C_omega_lambda2)
    constants.update(M2=params.M2, M1=params.M1, k=params.k, h0=params.h, rho_prime=params.rho_prime)
    return params, constants


def _header(cfg, command, **extra):
    return dict(command=command, version=__version__, backend=BACKEND, config=cfg.flat(), **extra)


# ---------------------------------------------------------------------------
# commands


def run_simulate(cfg):
    """Returns ``(rows, header)``; raises numerical errors."""
    grid = GridSpec(cfg.grid.L, cfg.grid.N)
    model = build_model(cfg, grid)
    data = build_data(cfg, grid)
    sc = cfg.solve_config()
    mode = cfg.solve.mode
    constants = {}
    if mode == "linear":
        rep = solve_linear(model, None, data, sc)
    elif mode == "nonlinear":
        rep = solve_linear(model, "self", data, sc)
    elif mode == "conjugated":
        params, constants = _params(cfg, model, data.g)
        rep = solve_conjugated(model, None, data, sc, params)
        constants["w_energy_ratio"] = rep.w_energy_ratio
    else:
        rep = solve_quasilinear(model, data, sc, max_iters=cfg.solve.max_iters, tol=cfg.solve.tol)
        constants.update(T_star=rep.info["T_star"], iterations=rep.info["iterations"])
    rows = rep.rows()
    if cfg.data.kind == "soliton":
        for row, v in zip(rows, rep.trajectory.values):
            ref = _soliton(cfg, grid, row["t"])
            row["l2_error"] = float(GridFunction(grid, v - ref.values).l2_norm() / ref.l2_norm())
    header = _header(cfg, "simulate", constants=constants, energy_ratio=rep.energy_ratio,
                     residual_trace=list(rep.residual_trace))
    return rows, header


def _row(name, measured, threshold, passed, expected="pass"):
    return dict(name=name, measured=float(measured), threshold=threshold,
                outcome="pass" if passed else "fail", expected=expected)


def _suite_weights(cfg):
    params = cfg.weight_params()
    rows = []
    sign = build_model(cfg).sign_a3
    for which in ("lambda2", "lambda1"):
        rep = verify_lambda_estimates(which, params, 3, 3, sign_a3=sign)
        for part in ("part_i", "part_ii", "order_zero"):
            r = getattr(rep, part)
            rows.append(_row(f"{which}.{part}.fitted_constant", r.fitted_A, "finite",
                             r.finite and np.isfinite(r.fitted_A)))
    return rows


def _suite_calculus(cfg):
    grid = GridSpec(cfg.grid.L, cfg.grid.N)
    model = build_model(cfg, grid)
    u = build_data(cfg, grid).g
    rng = np.random.default_rng(cfg.seed)
    rows = []
    # exponential multipliers invert each other on random band-limited functions
    theta, rho = cfg.weights.theta, cfg.solve.rho
    worst = 0.0
    for _ in range(20):
        c = np.zeros(grid.N, dtype=complex)
        band = np.abs(grid.xi_fft) < 0.5 * np.max(np.abs(grid.xi))
        c[band] = rng.standard_normal(band.sum()) + 1j * rng.standard_normal(band.sum())
        f = GridFunction.from_coeffs(grid, c / grid.N)
        w = lambda xi, s: np.exp(s * rho * (1 + xi ** 2) ** (0.5 / theta))  # noqa: E731
        back = fourier_multiplier(lambda xi: w(xi, -1), fourier_multiplier(lambda xi: w(xi, 1), f))
        worst = max(worst, np.max(np.abs(back.values - f.values)) / np.max(np.abs(f.values)))
    rows.append(_row("multiplier_round_trip", worst, 1e-12, worst <= 1e-12))
    zero = cfg.weight_params().with_(M2=0.0, M1=0.0, k=0.0, rho_prime=0.0)
    res0 = assemble_conjugated(model, u, zero).certificate().residual
    rows.append(_row("certificate_zero_weights", res0, 1e-12, res0 <= 1e-12))
    asm = assemble_conjugated(model, u, cfg.weight_params())
    sig = cfg.weights.sigma
    for name, sym, m1 in (("a2", asm.a2, 2.0), ("a1", asm.a1_corrected, 1.0), ("alow", asm.alow, 2 * (1 - sig))):
        rep = estimate_seminorm(sym, "S", m1=m1, mu=cfg.weights.theta, h=cfg.weights.h)
        rows.append(_row(f"seminorm.{name}.fitted_constant", rep.fitted_A, "finite",
                         rep.finite and np.isfinite(rep.fitted_A)))
    # the certificate needs a grid resolving the symbol expansion (e.g. L = pi, N = 128)
    res = asm.certificate().residual
    rows.append(_row("certificate", res, 1e-3, res <= 1e-3))
    return rows


def _suite_energy(cfg):
    grid = GridSpec(cfg.grid.L, cfg.grid.N)
    model = build_model(cfg, grid)
    data = build_data(cfg, grid)
    sc = cfg.solve_config()
    rows = []
    per = {}
    for dt in (sc.dt, sc.dt / 2):
        rep = solve_linear(model, None, data, sc.with_(dt=dt))
        per[dt] = [verify_energy(rep, data, sc.working_idx, d) for d in cfg.weights.deltas]
    for d, a, b in zip(cfg.weights.deltas, per[sc.dt], per[sc.dt / 2]):
        rows.append(_row(f"energy_ratio@delta={d:g}", b, "finite", np.isfinite(b)))
        change = abs(a - b) / b if b else 0.0
        rows.append(_row(f"dt_refinement_change@delta={d:g}", change, 0.1, change <= 0.1))
    vals = per[sc.dt / 2]
    mono = all(x >= y for x, y in zip(vals, vals[1:]))
    rows.append(_row("nonincreasing_in_delta", float(mono), 1.0, mono))
    return rows


def _suite_faadibruno(cfg):
    grid = GridSpec(cfg.grid.L, cfg.grid.N)
    model = build_model(cfg, grid)
    u = build_data(cfg, grid).g
    rep = coefficient_derivative_bound_check(model, u, 1.0, 4)
    return [_row(f"coefficient_bound.a{j}", C, "finite", np.isfinite(C))
            for j, C in enumerate(rep.per_coefficient)]


def _suite_neccond(cfg):
    n = cfg.neccond
    grid = GridSpec(n.L, n.N)
    s = cfg.model.s
    model = neccond_model(grid, s=s, a3=cfg.model.a3)
    rep = necessary_condition_scan(model, GridFunction.zeros(grid), np.geomspace(n.rho_min, n.rho_max, n.n_rho))
    expected = "pass" if s >= 1 else "fail"
    rows = [_row("log_fit_residual", rep.log_residual, "-", True),
            _row("power_fit_residual", rep.power_residual, "-", True),
            _row("logarithmic_growth_condition", rep.ratio, 0.2, rep.ratio <= 0.2, expected)]
    return rows


SUITE_RUNNERS = {
    "weights": _suite_weights,
    "calculus": _suite_calculus,
    "energy": _suite_energy,
    "faadibruno": _suite_faadibruno,
    "neccond": _suite_neccond,
}


def run_verify(cfg, suites):
    if not suites:
        raise ConfigError("--suite: at least one suite is required")
    bad = [s for s in suites if s not in SUITES]
    if bad:
        raise ConfigError(f"--suite: unknown suite(s) {', '.join(bad)}; choose from {', '.join(SUITES)}")
    rows = []
    for s in suites:
        for r in SUITE_RUNNERS[s](cfg):
            rows.append(dict(suite=s, **r))
    ok = all(r["outcome"] == r["expected"] for r in rows)
    return rows, _header(cfg, "verify", suites=list(suites), all_passed=ok), ok


def _sweep_point(args):
    cfg, axis, value = args
    base = dict(axis=axis, value=value)
    try:
        c = cfg.with_value(axis, value)
        grid = GridSpec(c.grid.L, c.grid.N)
        model = build_model(c, grid)
        rn = float(np.linalg.norm(inverse_residual_matrix(grid, c.weight_params(), model.sign_a3)[2], 2))
        data = build_data(c, grid)
        sc = c.solve_config()
        rep = solve_linear(model, None, data, sc)
        rows = []
        for d in c.weights.deltas:
            trace = rep.norm_traces[f"gevrey@{sc.working_idx.rho - d:g}"]
            growth = float(trace[-1] / trace[0]) if trace[0] > 0 else 0.0
            rows.append(dict(base, delta=d, status="ok", neumann_r_norm=rn,
                             energy_ratio=verify_energy(rep, data, sc.working_idx, d),
                             gevrey_growth=growth, gevrey_bounded=bool(growth < GEVREY_BOUNDED), error=""))
        return rows
    except (ConfigError, ValueError) + NUMERICAL_ERRORS as err:
        return [dict(base, delta="", status="failed", neumann_r_norm="", energy_ratio="", gevrey_growth="",
                     gevrey_bounded="", error=f"{type(err).__name__}: {err}")]


def run_sweep(cfg, axis, values, threads=1):
    """Long-format rows, one per ``(value, delta)``; failures are recorded per row."""
    flat = cfg.flat()
    if axis not in flat or isinstance(flat[axis], (str, bool)) or (
            isinstance(flat[axis], tuple) and axis != "weights.deltas"):
        raise ConfigError(f"--axis: {axis!r} is not a numeric configuration field")
    if not values:
        raise ConfigError("--values: at least one value is required")
    jobs = [(cfg, axis, v) for v in values]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(_sweep_point, jobs))
    else:
        chunks = [_sweep_point(j) for j in jobs]
    rows = [r for chunk in chunks for r in chunk]
    return rows, _header(cfg, "sweep", axis=axis, values=list(values))


def run_conjugate(cfg):
    grid = GridSpec(cfg.grid.L, cfg.grid.N)
    model = build_model(cfg, grid)
    u = build_data(cfg, grid).g
    params, constants = _params(cfg, model, u)
    asm = assemble_conjugated(model, u, params)
    cert = asm.certificate()
    rows = []
    blocks = {"a2": asm.a2.table, "a1": asm.a1_corrected, "alow": asm.alow.table, "r0": asm.r0.table}
    blocks = {k: np.asarray(getattr(v, "table", v)) for k, v in blocks.items()}
    for i, x in enumerate(grid.x):
        for j, xi in enumerate(grid.xi):
            row = dict(x=float(x), xi=float(xi))
            for k, v in blocks.items():
                row[f"{k}_re"] = float(v[i, j].real)
                row[f"{k}_im"] = float(v[i, j].imag)
            rows.append(row)
    header = _header(cfg, "conjugate", constants=constants, certificate=cert.residual, r_norm=cert.r_norm)
    return rows, header


def run_neccond(cfg):
    n = cfg.neccond
    grid = GridSpec(n.L, n.N)
    model = neccond_model(grid, s=cfg.model.s, a3=cfg.model.a3)
    rhos = np.geomspace(n.rho_min, n.rho_max, n.n_rho)
    rep = necessary_condition_scan(model, GridFunction.zeros(grid), rhos)
    Mlog, Nlog = rep.log_fit
    log_fit = Mlog * np.log1p(rep.rhos) + Nlog
    power_fit = rep.power_fit * rep.rhos ** (1.0 - rep.sigma)
    rows = [dict(rho=float(r), S=float(s), log_fit=float(lf), power_fit=float(pf))
            for r, s, lf, pf in zip(rep.rhos, rep.S, log_fit, power_fit)]
    header = _header(cfg, "neccond", log_coefficients=[float(Mlog), float(Nlog)], power_coefficient=float(rep.power_fit),
                     log_residual=rep.log_residual, power_residual=rep.power_residual,
                     ratio=rep.ratio, winner="log" if rep.log_wins else "power")
    return rows, header


# ---------------------------------------------------------------------------
# entry point


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="configuration file (defaults when omitted)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--seed", type=int, default=None, help="seed for randomised checks")
    common.add_argument("--threads", type=int, default=1, help="worker processes for sweeps")
    p = argparse.ArgumentParser(prog="gevrey-kdv", description="Gevrey well-posedness laboratory")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="solve and write norm traces")
    v = sub.add_parser("verify", parents=[common], help="run verification suites")
    v.add_argument("--suite", default="", help=f"comma-separated subset of {', '.join(SUITES)}")
    s = sub.add_parser("sweep", parents=[common], help="sweep one numeric field")
    s.add_argument("--axis", required=True, help="dotted field name, e.g. weights.h")
    s.add_argument("--values", required=True, help="comma-separated values")
    sub.add_parser("conjugate", parents=[common], help="dump the assembled conjugated symbols")
    sub.add_parser("neccond", parents=[common], help="necessary-condition growth scan")
    return p


def _parse_values(text):
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            out.append(int(tok) if re.fullmatch(r"[+-]?\d+", tok) else float(tok))
        except ValueError:
            raise ConfigError(f"--values: {tok!r} is not a number") from None
    return out


def main(argv=None):
    args = _parser().parse_args(argv)
    out = Path(args.out)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        ok = True
        if args.command == "simulate":
            rows, header = run_simulate(cfg)
        elif args.command == "verify":
            suites = [s.strip() for s in args.suite.split(",") if s.strip()]
            rows, header, ok = run_verify(cfg, suites)
        elif args.command == "sweep":
            rows, header = run_sweep(cfg, args.axis, _parse_values(args.values), args.threads)
            ok = any(r["status"] == "ok" for r in rows)
        elif args.command == "conjugate":
            rows, header = run_conjugate(cfg)
        else:
            rows, header = run_neccond(cfg)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1
    except NUMERICAL_ERRORS as err:
        print(f"numerical failure ({type(err).__name__}): {err}", file=sys.stderr)
        return 2
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{args.command}.csv"
    write_csv(path, rows, header)
    print(f"wrote {path} ({len(rows)} rows)")
    return 0 if ok else 2


if __name__ == "__main__":
    sys.exit(main())
