import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from gevrey_kdv.spectral_core import (
    GevreyIndex,
    GridFunction,
    GridMismatchError,
    GridSpec,
    MultiplierOverflowError,
    band_index,
    bracket,
    fourier_multiplier,
    gevrey_inner,
    gevrey_norm,
    tame_decompose,
    tame_reassemble,
    tameness_scan,
)

GRID = GridSpec(np.pi, 64)


def random_function(grid, seed):
    rng = np.random.default_rng(seed)
    c = rng.standard_normal(grid.N) + 1j * rng.standard_normal(grid.N)
    c *= np.exp(-0.3 * np.abs(grid.xi_fft))
    c[grid.nyquist_fft] = 0
    return GridFunction.from_coeffs(grid, c)


def test_grid_validation():
    with pytest.raises(ValueError):
        GridSpec(1.0, 7)
    with pytest.raises(ValueError):
        GridSpec(1.0, 6)
    with pytest.raises(ValueError):
        GridSpec(-1.0, 16)
    with pytest.raises(ValueError):
        GridSpec(1.0, 16, 0.5)
    g = GridSpec(2.0, 8)
    assert np.allclose(g.x, -2.0 + 0.5 * np.arange(8))
    assert np.allclose(g.xi, np.pi / 2.0 * np.arange(-4, 4))


def test_bracket_values():
    assert bracket(0, 1) == 1
    assert bracket(0, 7.5) == 7.5
    assert bracket(3, 4) == 5


def test_round_trip():
    u = random_function(GRID, 1)
    v = GridFunction.from_coeffs(GRID, u.coeffs())
    assert np.max(np.abs(v.values - u.values)) <= 1e-12 * np.max(np.abs(u.values))


def test_identity_and_derivative_multipliers():
    grid = GridSpec(3.0, 32)
    u = GridFunction.from_function(grid, lambda x: np.sin(np.pi * x / grid.L))
    assert np.allclose(fourier_multiplier(lambda xi: np.ones_like(xi), u).values, u.values, atol=1e-14)
    du = fourier_multiplier(lambda xi: 1j * xi, u)
    exact = np.pi / grid.L * np.cos(np.pi * grid.x / grid.L)
    assert np.max(np.abs(du.values - exact)) <= 1e-10


def test_exponential_pair_is_identity():
    u = random_function(GRID, 2)
    w = lambda xi: np.exp(0.7 * bracket(xi) ** (1 / 1.5))
    back = fourier_multiplier(lambda xi: 1 / w(xi), fourier_multiplier(w, u))
    assert np.max(np.abs(back.values - u.values)) <= 1e-10


def test_multiplier_overflow():
    u = random_function(GRID, 3)
    with pytest.raises(MultiplierOverflowError):
        fourier_multiplier(lambda xi: np.exp(800 * bracket(xi)), u)
    with pytest.raises(MultiplierOverflowError):
        gevrey_norm(u, GevreyIndex(0, 400.0, 1.01))


def test_norm_of_zero_and_single_mode():
    assert gevrey_norm(GridFunction.zeros(GRID), GevreyIndex(2, 1, 2)) == 0.0
    grid = GridSpec(5.0, 64)
    xi0 = 3 * np.pi / grid.L
    u = GridFunction.from_function(grid, lambda x: np.exp(1j * xi0 * x))
    idx = GevreyIndex(1.5, 0.8, 1.7)
    expected = np.sqrt(2 * grid.L) * bracket(xi0) ** 1.5 * np.exp(0.8 * bracket(xi0) ** (1 / 1.7))
    assert gevrey_norm(u, idx) == pytest.approx(expected, rel=1e-12)


def test_sech_norm_matches_quadrature():
    grid = GridSpec(20 * np.pi, 256)
    u = GridFunction.from_function(grid, lambda x: 1 / np.cosh(x))
    norm2 = gevrey_norm(u, GevreyIndex(0, 0, 2)) ** 2
    # brute-force quadrature of |u|^2 on the same nodes
    direct = grid.dx * np.sum(1 / np.cosh(grid.x) ** 2)
    assert norm2 == pytest.approx(direct, abs=1e-8)
    # against the exact integral the only gap is the trapezoid aliasing error,
    # 2 sum_n F(2 pi n / dx) with F(xi) = pi xi / sinh(pi xi / 2) the transform of sech^2
    exact, _ = integrate.quad(lambda x: 1 / np.cosh(x) ** 2, -grid.L, grid.L, epsabs=1e-13)
    assert exact == pytest.approx(2.0, abs=1e-12)
    k = 2 * np.pi / grid.dx * np.arange(1, 4)
    aliasing = 2 * np.sum(np.pi * k / np.sinh(np.pi * k / 2))
    assert direct - exact == pytest.approx(aliasing, abs=1e-12)
    # the remaining gap to the grid quadrature is the zeroed Nyquist mode
    nyquist = 2 * grid.L * abs(u.coeffs()[grid.nyquist_fft]) ** 2
    assert direct - norm2 == pytest.approx(nyquist, abs=1e-14)


def test_inner_product_properties():
    idx = GevreyIndex(1, 0.5, 2)
    u, v = random_function(GRID, 4), random_function(GRID, 5)
    assert gevrey_inner(u, u, idx).real == pytest.approx(gevrey_norm(u, idx) ** 2, rel=1e-12)
    assert abs(gevrey_inner(u, u, idx).imag) <= 1e-12 * gevrey_norm(u, idx) ** 2
    assert abs(gevrey_inner(u, v, idx) - np.conj(gevrey_inner(v, u, idx))) <= 1e-12 * abs(gevrey_inner(u, v, idx))
    e1 = GridFunction.from_function(GRID, lambda x: np.exp(1j * 2 * x))
    e2 = GridFunction.from_function(GRID, lambda x: np.exp(1j * 5 * x))
    assert abs(gevrey_inner(e1, e2, idx)) <= 1e-12
    with pytest.raises(GridMismatchError):
        gevrey_inner(u, GridFunction.zeros(GridSpec(np.pi, 32)), idx)


def test_band_assignment_single_mode():
    # <xi0> = 2.5 exactly: xi0 = sqrt(5.25), theta = 1.2 -> j^1.2 <= 2.5 < (j+1)^1.2
    j_expected = max(j for j in range(1, 10) if j ** 1.2 <= 2.5)
    assert j_expected == 2
    L = np.pi / np.sqrt(5.25) * 3
    grid = GridSpec(L, 32)
    assert bracket(grid.xi_fft[3]) == pytest.approx(2.5)
    u = GridFunction.from_function(grid, lambda x: np.exp(1j * grid.xi_fft[3] * x))
    pieces = tame_decompose(u, 1.2)
    norms = [p.l2_norm() for p in pieces]
    assert np.argmax(norms) + 1 == j_expected
    assert sum(n > 1e-12 for n in norms) == 1


def test_zero_mode_goes_to_band_one():
    j = band_index(GRID, 1.5)
    assert j[0] == 1
    assert np.all(j >= 1)


def test_decompose_zero_and_reassemble():
    pieces = tame_decompose(GridFunction.zeros(GRID), 1.3)
    assert all(np.all(p.values == 0) for p in pieces)
    assert np.all(tame_reassemble([], 1.3, grid=GRID).values == 0)
    u = random_function(GRID, 6)
    back = tame_reassemble(tame_decompose(u, 1.3), 1.3)
    assert np.max(np.abs(back.values - u.values)) <= 1e-12


def test_reassemble_grid_mismatch():
    a = GridFunction.zeros(GRID)
    b = GridFunction.zeros(GridSpec(np.pi, 32))
    with pytest.raises(GridMismatchError):
        tame_reassemble([a, b], 1.5)


def test_tameness_scan_finite():
    ratios = tameness_scan(GridSpec(4.0, 64), 1.5, k_values=(1, 2, 3), n_samples=50)
    for k, r in ratios.items():
        assert np.isfinite(r) and r > 0
        # band j has <xi> >= j^theta, so exp(jk) <= exp(k <xi>^(1/theta)) < exp((k+1) <xi>^(1/theta))
        assert r <= 1.0


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 10**6), rho=st.floats(0, 2), drho=st.floats(0, 2), m=st.floats(-2, 3))
def test_norm_monotone_in_rho(seed, rho, drho, m):
    u = random_function(GRID, seed)
    assert gevrey_norm(u, GevreyIndex(m, rho, 1.8)) <= gevrey_norm(u, GevreyIndex(m, rho + drho, 1.8)) * (1 + 1e-14)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6), a=st.floats(-2, 2), b=st.floats(0.1, 3))
def test_multiplier_composition(seed, a, b):
    u = random_function(GRID, seed)
    m1 = lambda xi: np.exp(1j * a * xi)
    m2 = lambda xi: bracket(xi) ** b
    lhs = fourier_multiplier(m1, fourier_multiplier(m2, u))
    rhs = fourier_multiplier(lambda xi: m1(xi) * m2(xi), u)
    assert np.max(np.abs(lhs.values - rhs.values)) <= 1e-12 * max(1.0, np.max(np.abs(rhs.values)))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6), theta=st.floats(1.05, 4))
def test_plancherel_and_partition(seed, theta):
    u = random_function(GRID, seed)
    assert gevrey_norm(u, GevreyIndex(0, 0, theta)) == pytest.approx(u.l2_norm(), rel=1e-10)
    back = tame_reassemble(tame_decompose(u, theta), theta)
    assert np.max(np.abs(back.values - u.values)) <= 1e-12
