import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gevrey_kdv.psdo_calculus import (
    DenseSizeError,
    DepthCapError,
    Symbol,
    admissible_projector,
    compose_asymptotic,
    estimate_seminorm,
    garding_floor,
    hermitian_split,
    quantize_apply,
    quantize_matrix,
    read_symbol_csv,
    reverse_quantize_apply,
    reverse_quantize_matrix,
    write_symbol_csv,
)
from gevrey_kdv.spectral_core import (
    GevreyIndex,
    GridFunction,
    GridMismatchError,
    GridSpec,
    bracket,
    fourier_multiplier,
    gevrey_norm,
)

GRID = GridSpec(4.0, 64)


def random_function(grid, seed, decay=0.4):
    rng = np.random.default_rng(seed)
    c = rng.standard_normal(grid.N) + 1j * rng.standard_normal(grid.N)
    c *= np.exp(-decay * np.abs(grid.xi_fft))
    c[grid.nyquist_fft] = 0
    return GridFunction.from_coeffs(grid, c)


def random_symbol(grid, seed):
    rng = np.random.default_rng(seed)
    return Symbol(grid, rng.standard_normal((grid.N, grid.N)) + 1j * rng.standard_normal((grid.N, grid.N)))


def bump(x):
    # smooth and 8-periodic, so spectral x-derivatives are exact on GRID
    return np.exp(0.5 * np.cos(np.pi * x / 4)) * (1 + 0.3 * np.sin(np.pi * x / 4))


def dbump(x):
    c, s = np.cos(np.pi * x / 4), np.sin(np.pi * x / 4)
    return np.pi / 4 * np.exp(0.5 * c) * (-0.5 * s * (1 + 0.3 * s) + 0.3 * c)


def inner(u, v):
    return u.grid.dx * np.sum(u.values * v.values.conj())


def test_identity_derivative_multiplication():
    u = random_function(GRID, 0)
    one = Symbol.multiplier(GRID, lambda xi: np.ones_like(xi))
    assert np.max(np.abs(quantize_apply(one, u).values - u.values)) <= 1e-12
    d = Symbol.multiplier(GRID, lambda xi: 1j * xi)
    du = fourier_multiplier(lambda xi: 1j * xi, u)
    assert np.max(np.abs(quantize_apply(d, u).values - du.values)) <= 1e-12
    a = Symbol.multiplication(GRID, bump)
    assert np.max(np.abs(quantize_apply(a, u).values - bump(GRID.x) * u.values)) <= 1e-12


def test_x_independent_equals_multiplier():
    m = lambda xi: np.exp(0.3 * bracket(xi) ** 0.5) * (1 + 1j * xi)
    u = random_function(GRID, 1)
    p = Symbol.multiplier(GRID, m)
    ref = fourier_multiplier(m, u).values
    assert np.max(np.abs(quantize_apply(p, u).values - ref)) <= 1e-12 * np.max(np.abs(ref))
    assert np.max(np.abs(reverse_quantize_apply(p, u).values - ref)) <= 1e-12 * np.max(np.abs(ref))


def test_grid_mismatch():
    with pytest.raises(GridMismatchError):
        quantize_apply(Symbol(GRID, 1.0), GridFunction.zeros(GridSpec(4.0, 32)))
    with pytest.raises(GridMismatchError):
        reverse_quantize_apply(Symbol(GRID, 1.0), GridFunction.zeros(GridSpec(3.0, 64)))


def test_matrix_identity_on_admissible_functions():
    m = quantize_matrix(Symbol(GRID, 1.0))
    p = admissible_projector(GRID)
    assert np.max(np.abs(m - p)) <= 1e-12
    # with the Nyquist mode excluded from the function space, op(1) is the identity there
    u = random_function(GRID, 2)
    assert np.max(np.abs(m @ u.values - u.values)) <= 1e-12


def test_matrix_derivative_and_consistency():
    d = Symbol.multiplier(GRID, lambda xi: 1j * xi)
    m = quantize_matrix(d)
    ref = np.column_stack([fourier_multiplier(lambda xi: 1j * xi, GridFunction(GRID, e)).values
                           for e in np.eye(GRID.N)])
    assert np.max(np.abs(m - ref)) <= 1e-10
    p = random_symbol(GRID, 3)
    mp = quantize_matrix(p)
    mr = reverse_quantize_matrix(p)
    for s in range(20):
        u = random_function(GRID, 100 + s, decay=0.0)
        assert np.max(np.abs(mp @ u.values - quantize_apply(p, u).values)) <= 1e-10
        assert np.max(np.abs(mr @ u.values - reverse_quantize_apply(p, u).values)) <= 1e-10


def test_dense_guard():
    big = GridSpec(1.0, 2048)
    with pytest.raises(DenseSizeError):
        quantize_matrix(Symbol(big, 1.0))


def test_reverse_quantization_adjoint_and_transpose():
    p = Symbol.from_function(GRID, lambda x, xi: np.exp(-x ** 2) * (1 + 1j * xi) + 0.3 * np.cos(x) * xi ** 2)
    for s in range(5):
        u, v = random_function(GRID, s), random_function(GRID, 50 + s)
        lhs = inner(reverse_quantize_apply(p, u), v)
        # sesquilinear pairing: the right quantization is the adjoint of op(conj p)
        assert abs(lhs - inner(u, quantize_apply(p.conj(), v))) <= 1e-10 * max(1, abs(lhs))
        # bilinear pairing: the transpose is op(p(x, -xi))
        bil = GRID.dx * np.sum(reverse_quantize_apply(p, u).values * v.values)
        ref = GRID.dx * np.sum(u.values * quantize_apply(p.reflect(), v).values)
        assert abs(bil - ref) <= 1e-10 * max(1, abs(bil))


def test_compose_units_and_leibniz():
    a = Symbol.multiplication(GRID, bump)
    one = Symbol(GRID, 1.0)
    assert np.max(np.abs(compose_asymptotic(one, a, 3).table - a.table)) <= 1e-14
    assert np.max(np.abs(compose_asymptotic(a, one, 3).table - a.table)) <= 1e-12
    d = Symbol.multiplier(GRID, lambda xi: 1j * xi, xi_order=1)
    s = compose_asymptotic(d, a, 2)
    x, xi = GRID.x[:, None], GRID.xi[None, :]
    exact = 1j * xi * bump(x) + dbump(x)
    assert np.max(np.abs(s.table - exact)) <= 1e-8
    assert s.xi_order == 1
    for k in range(3):
        u = random_function(GRID, 10 + k, decay=1.0)
        lhs = quantize_apply(s, u).values
        rhs = quantize_apply(d, quantize_apply(a, u)).values
        assert np.max(np.abs(lhs - rhs)) <= 1e-8 * np.max(np.abs(rhs))


def test_compose_exact_for_polynomial_symbols():
    grid = GridSpec(4.0, 64)
    p = Symbol.from_function(grid, lambda x, xi: 2j * xi ** 2 + np.cos(np.pi * x / 2) * xi, xi_order=2)
    q = Symbol.multiplication(grid, bump)
    s = compose_asymptotic(p, q, 3)
    m = quantize_matrix(p) @ quantize_matrix(q)
    for k in range(3):
        u = random_function(grid, 20 + k, decay=1.0)
        ref = m @ u.values
        assert np.max(np.abs(quantize_apply(s, u).values - ref)) <= 1e-8 * np.max(np.abs(ref))


def test_compose_remainder_decreases():
    grid = GridSpec(2 * np.pi, 64)
    p = Symbol.multiplier(grid, lambda xi: bracket(xi, 4.0) ** 0.5)
    q = Symbol.multiplication(grid, lambda x: np.exp(np.cos(x)))
    u = random_function(grid, 7, decay=0.6)
    ref = quantize_apply(p, quantize_apply(q, u)).values
    errs = [np.linalg.norm(quantize_apply(compose_asymptotic(p, q, n), u).values - ref) for n in (1, 2, 3, 4)]
    assert errs[0] > errs[1] > errs[2] > errs[3]


def test_compose_depth_cap():
    with pytest.raises(DepthCapError):
        compose_asymptotic(Symbol(GRID, 1.0), Symbol(GRID, 1.0), 10)


def test_seminorm_constant_and_bracket():
    rep = estimate_seminorm(Symbol(GRID, 1.0), "S", 0, 0, mu=1.5, alpha_max=3, beta_max=3)
    assert rep.fitted_A == 1.0
    assert rep.worst_ratio <= 1.0 + 1e-12
    grid = GridSpec(2.0, 64, 2.0)
    p = Symbol.multiplier(grid, lambda xi: bracket(xi, 2.0))
    rep = estimate_seminorm(p, "S", 1, 0, mu=1.0, alpha_max=3, beta_max=0)
    assert rep.finite and np.isfinite(rep.fitted_A)
    assert rep.ratios[0, 0] == pytest.approx(1.0)


def test_seminorm_sg_weight():
    p = Symbol.from_function(GRID, lambda x, xi: bracket(x) ** -0.75 * xi ** 2, xi_order=2, x_order=-0.75)
    rep = estimate_seminorm(p, "SG", 2, -0.75, mu=1.2, alpha_max=2, beta_max=2)
    assert rep.finite
    assert rep.ratios[0, 0] <= 1.0 + 1e-12


def test_hermitian_split_cases():
    h, a = hermitian_split(Symbol.multiplier(GRID, lambda xi: bracket(xi) ** 2))
    assert np.max(np.abs(a)) <= 1e-12 * np.max(np.abs(h))
    h, a = hermitian_split(Symbol.multiplier(GRID, lambda xi: 1j * xi))
    assert np.max(np.abs(h)) <= 1e-12 * np.max(np.abs(a))
    p = random_symbol(GRID, 4)
    h, a = hermitian_split(p)
    m = quantize_matrix(p)
    assert np.max(np.abs(h + a - m)) <= 4 * np.finfo(float).eps * np.max(np.abs(m))
    for s in range(20):
        u = random_function(GRID, 30 + s, decay=0.0).values
        assert abs((u.conj() @ a @ u).real) <= 1e-12 * np.vdot(u, u).real


def test_garding_floor_examples():
    assert garding_floor(Symbol.multiplier(GRID, lambda xi: bracket(xi) ** 2)) >= -1e-10
    assert garding_floor(Symbol(GRID, -1.0)) == pytest.approx(-1.0, abs=1e-10)
    floors = []
    for n in (128, 256):
        grid = GridSpec(8.0, n)
        p = Symbol.from_function(grid, lambda x, xi: bracket(x) ** -0.75 * xi ** 2)
        floors.append(garding_floor(p))
    assert floors[0] < 0 or floors[1] < 0 or min(floors) >= -1e-10
    c0, c1 = max(-floors[0], 1e-12), max(-floors[1], 1e-12)
    assert c1 <= 1.5 * c0 and c0 <= 1.5 * c1


def test_csv_round_trip(tmp_path):
    p = Symbol(GridSpec(2.0, 8, 3.0), np.arange(64).reshape(8, 8) * (1 + 0.5j), xi_order=2, x_order=-1, gevrey_mu=1.4)
    path = tmp_path / "p.csv"
    write_symbol_csv(p, path)
    q = read_symbol_csv(path)
    assert q.grid == p.grid and q.xi_order == 2 and q.x_order == -1 and q.gevrey_mu == 1.4
    assert np.array_equal(q.table, p.table)
    first = open(path).readline()
    assert first.startswith("# {")


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), a=st.complex_numbers(max_magnitude=3), b=st.complex_numbers(max_magnitude=3))
def test_quantization_is_linear(seed, a, b):
    p = random_symbol(GRID, seed)
    u, v = random_function(GRID, seed + 1), random_function(GRID, seed + 2)
    lhs = quantize_apply(p, a * u + b * v).values
    rhs = a * quantize_apply(p, u).values + b * quantize_apply(p, v).values
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * max(1.0, np.max(np.abs(rhs)))


def test_continuity_in_gevrey_sobolev_scale():
    grid = GridSpec(4.0, 64)
    p = Symbol.from_function(grid, lambda x, xi: (2 + np.cos(x)) * bracket(xi) ** 1.5, xi_order=1.5)
    rep = estimate_seminorm(p, "S", 1.5, 0, mu=1.5, alpha_max=2, beta_max=2)
    assert rep.finite
    ratios = []
    rng = np.random.default_rng(9)
    for _ in range(100):
        u = random_function(grid, int(rng.integers(1 << 30)), decay=0.2)
        num = gevrey_norm(quantize_apply(p, u), GevreyIndex(1.0 - 1.5, 0.5, 1.5))
        den = gevrey_norm(u, GevreyIndex(1.0, 0.5, 1.5))
        ratios.append(num / den)
    assert np.isfinite(max(ratios)) and max(ratios) < 10
