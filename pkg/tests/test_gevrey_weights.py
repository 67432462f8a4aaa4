import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from gevrey_kdv.gevrey_weights import (
    CutoffPair,
    InversionDivergenceError,
    WeightParams,
    bracket_power_integral,
    build_Q,
    capital_lambda,
    dominance_threshold,
    frequency_taper,
    gevrey_step,
    gevrey_step_jet,
    h_sweep,
    inverse_term_report,
    invert_e_lambda,
    lambda1,
    lambda2,
    lambda_x_derivatives,
    q_regularization_norm,
    verify_lambda_estimates,
    weight_table,
)
from gevrey_kdv.jets import Jet
from gevrey_kdv.psdo_calculus import spectral_dx
from gevrey_kdv.spectral_core import GridFunction, GridSpec, bracket

PARAMS = WeightParams(sigma=0.75, theta=1.6, M2=1.0, M1=1.0, h=4.0)
TORUS = GridSpec(np.pi, 128)


def band_limited(grid, seed, frac=0.5):
    rng = np.random.default_rng(seed)
    c = rng.standard_normal(grid.N) + 1j * rng.standard_normal(grid.N)
    c[np.abs(grid.xi_fft) > frac * np.max(grid.xi)] = 0
    c[grid.nyquist_fft] = 0
    return GridFunction.from_coeffs(grid, c)


def reference_integral(x, s, R, mu):
    """Plain adaptive quadrature of <y>^-s psi(<y>/R) over [0, |x|]."""
    cut = CutoffPair(mu)
    f = lambda y: (1 + y * y) ** (-s / 2) * cut.psi(np.sqrt(1 + y * y) / R)
    pts = [p for p in (np.sqrt(max(R * R / 4 - 1, 0)), np.sqrt(max(R * R - 1, 0))) if 0 < p < abs(x)]
    val, _ = integrate.quad(f, 0, abs(x), points=pts or None, limit=500, epsabs=1e-12, epsrel=1e-12)
    return np.sign(x) * val


def test_params_validation_and_default_mu():
    assert PARAMS.mu == pytest.approx(0.5 * (1 + 1.6))
    with pytest.raises(ValueError):
        WeightParams(sigma=1.2)
    with pytest.raises(ValueError):
        WeightParams(sigma=0.75, theta=2.5)
    with pytest.raises(ValueError):
        WeightParams(theta=1.6, mu=1.7)
    with pytest.raises(ValueError):
        WeightParams(h=0.5)
    assert WeightParams(M2=0, M1=0, k=0, rho_prime=0).M2 == 0


def test_cutoff_plateaus_exact():
    cut = CutoffPair(1.3, sign_a3=1.0)
    xi = np.concatenate([np.linspace(-1, 1, 101), np.linspace(2, 50, 101), -np.linspace(2, 50, 101)])
    w = cut.w(xi)
    assert np.all(np.abs(w[:101]) <= 1e-14)
    assert np.all(np.abs(w[101:] + 1.0) <= 1e-14)
    assert np.all(np.abs(CutoffPair(1.3, -1.0).w(xi[101:]) - 1.0) <= 1e-14)
    y = np.linspace(-0.5, 0.5, 101)
    assert np.all(np.abs(cut.psi(y) - 1) <= 1e-14)
    assert np.all(np.abs(cut.psi(np.linspace(1, 3, 50))) <= 1e-14)


def test_step_jet_matches_finite_differences():
    s = np.linspace(0.05, 0.95, 37)
    jet = gevrey_step_jet(Jet.variable(s, 4), 1.3)
    h = 1e-3
    f = lambda t: gevrey_step(t, 1.3)
    fd1 = (f(s + h) - f(s - h)) / (2 * h)
    fd2 = (f(s + h) - 2 * f(s) + f(s - h)) / h ** 2
    assert np.max(np.abs(jet.derivative(0) - f(s))) <= 1e-15
    assert np.max(np.abs(jet.derivative(1) - fd1)) <= 1e-4 * max(1, np.max(np.abs(fd1)))
    assert np.max(np.abs(jet.derivative(2) - fd2)) <= 1e-3 * max(1, np.max(np.abs(fd2)))


def test_cutoff_gevrey_constant_finite():
    cut = CutoffPair(1.3)
    for which in ("psi", "w"):
        c_fit, ratios = cut.derivative_constant(which, order=6)
        assert np.isfinite(c_fit) and c_fit < 50
        assert np.all(ratios <= c_fit ** (np.arange(7) + 1) * (1 + 1e-12))


@settings(max_examples=50, deadline=None)
@given(s=st.floats(-1, 2), mu=st.floats(1.05, 3))
def test_step_symmetry(s, mu):
    assert gevrey_step(s, mu) + gevrey_step(1 - s, mu) == pytest.approx(1.0, abs=1e-14)
    assert 0.0 <= gevrey_step(s, mu) <= 1.0


def test_bracket_power_integral_closed_form():
    for z, s in [(0.3, 0.75), (5.0, 0.75), (40.0, 0.375), (-7.0, 0.9)]:
        ref, _ = integrate.quad(lambda y: (1 + y * y) ** (-s / 2), 0, abs(z), epsabs=1e-13)
        assert bracket_power_integral(z, s) == pytest.approx(np.sign(z) * ref, abs=1e-11)


def test_lambda_trivial_examples():
    assert lambda2(0.0, 37.0, 1.0, PARAMS) == 0.0
    assert lambda1(0.0, 37.0, 1.0, PARAMS) == 0.0
    xi = np.linspace(-PARAMS.h, PARAMS.h, 21)
    assert np.all(lambda2(3.0, xi, 1.0, PARAMS) == 0.0)
    assert np.all(lambda1(-3.0, xi, 1.0, PARAMS) == 0.0)
    double = PARAMS.with_(M1=2.0)
    assert lambda1(2.5, 11.0, 1.0, double) == pytest.approx(2 * lambda1(2.5, 11.0, 1.0, PARAMS), rel=1e-14)


@pytest.mark.parametrize("x, xi", [(0.7, 9.0), (12.0, 8.0), (300.0, 20.0), (5e4, 30.0)])
def test_lambda2_value_against_plain_quadrature(x, xi):
    R = bracket(xi, PARAMS.h) ** 2
    expected = -PARAMS.M2 * reference_integral(x, PARAMS.sigma, R, PARAMS.mu)
    value = lambda2(x, xi, 1.0, PARAMS)
    assert value < 0
    assert value == pytest.approx(expected, abs=1e-9)
    # lambda1 with its extra <xi>_h^-1 and halved exponent
    expected1 = -PARAMS.M1 * reference_integral(x, PARAMS.sigma / 2, R, PARAMS.mu) / np.sqrt(R)
    assert lambda1(x, xi, 1.0, PARAMS) == pytest.approx(expected1, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(x=st.floats(-200, 200), xi=st.floats(-60, 60), sign=st.sampled_from([-1.0, 1.0]))
def test_lambda_odd_and_signed(x, xi, sign):
    v = lambda2(x, xi, sign, PARAMS)
    assert lambda2(-x, xi, sign, PARAMS) == pytest.approx(-v, abs=1e-12)
    if abs(xi) >= 2 * PARAMS.h and abs(x) > 1e-6:
        assert np.sign(v) == -sign * np.sign(x)


def test_lambda2_bounded_by_frequency_power():
    xi = np.linspace(-400, 400, 161)
    x = np.geomspace(1e-2, 1e6, 60)
    X, XI = np.meshgrid(x, xi, indexing="ij")
    ratio = np.abs(lambda2(X, XI, 1.0, PARAMS)) / (PARAMS.M2 * bracket(XI, PARAMS.h) ** (2 * (1 - PARAMS.sigma)))
    # regression bound: the integral of <y>^-sigma up to <y> = <xi>_h^2 is about 4 <xi>_h^(1/2)
    assert np.max(ratio) <= 4.5
    assert np.max(ratio) >= 1.0


def test_lambda_x_derivatives_match_differences():
    x = np.linspace(-30, 30, 41)
    xi = 11.0
    d = lambda_x_derivatives("lambda2", x, xi, 1.0, PARAMS, 3)
    h = 1e-4
    fd = (lambda2(x + h, xi, 1.0, PARAMS) - lambda2(x - h, xi, 1.0, PARAMS)) / (2 * h)
    assert np.max(np.abs(d[1] - fd)) <= 1e-7
    plus = lambda_x_derivatives("lambda2", x + h, xi, 1.0, PARAMS, 2)
    minus = lambda_x_derivatives("lambda2", x - h, xi, 1.0, PARAMS, 2)
    assert np.max(np.abs(d[2] - (plus[1] - minus[1]) / (2 * h))) <= 1e-7
    assert np.max(np.abs(d[3] - (plus[2] - minus[2]) / (2 * h))) <= 1e-7


def test_capital_lambda_examples():
    p = WeightParams(rho_prime=0.5, k=2.0, T=1.5, h=1.0)
    xi = np.linspace(-30, 30, 13)
    assert np.allclose(capital_lambda(p.T, xi, p), p.rho_prime * bracket(xi) ** (1 / p.theta), rtol=1e-15)
    assert capital_lambda(0.0, 0.0, p) == pytest.approx(p.rho_prime + p.k * p.T)
    dt = 1e-5
    fd = (capital_lambda(0.7 + dt, xi, p) - capital_lambda(0.7 - dt, xi, p)) / (2 * dt)
    assert np.max(np.abs(fd + p.k * bracket(xi) ** (2 * (1 - p.sigma)))) <= 1e-6
    assert np.all(capital_lambda(0.2, xi[xi != 0], p) > capital_lambda(0.3, xi[xi != 0], p))


def test_capital_lambda_dominance_at_grid_extremes():
    p = WeightParams(rho_prime=1.0, k=1.0, T=1.0, h=1.0)
    star = dominance_threshold(p)
    grid = GridSpec(np.pi / 32, 128)     # frequencies up to 2048
    xi = grid.xi
    top = xi[np.abs(xi) >= 0.9 * np.max(xi)]
    assert np.all(bracket(top) >= star)
    lhs = p.rho_prime * bracket(top) ** (1 / p.theta)
    rhs = p.k * p.T * bracket(top) ** (2 * (1 - p.sigma))
    assert np.all(lhs >= rhs)


def test_periodized_table_matches_exact_weight_in_core():
    tab = weight_table(TORUS, PARAMS.with_(torus_window="gevrey"), 1.0, periodic=True, x_order=3)
    exact = weight_table(TORUS, PARAMS, 1.0, periodic=False, x_order=3)
    rows = np.abs(TORUS.x) <= 0.15 * TORUS.L
    cols = np.abs(TORUS.xi) <= 0.5 * np.max(TORUS.xi)
    assert np.max(np.abs(tab.values[:, rows][:, :, cols] - exact.values[:, rows][:, :, cols])) <= 1e-9
    assert np.max(np.abs(tab.table[0])) <= 1e-9       # x = -L
    assert np.all(frequency_taper(TORUS, PARAMS.mu)[np.abs(TORUS.xi) >= 0.85 * np.max(TORUS.xi)] == 0)


def test_analytic_window_agrees_with_exact_weight_to_third_order():
    tab = weight_table(TORUS, PARAMS, 1.0, periodic=True, x_order=1)
    exact = weight_table(TORUS, PARAMS, 1.0, periodic=False, x_order=1)
    x = TORUS.x
    rows = (np.abs(x) <= 0.15 * TORUS.L) & (x != 0)
    cols = np.abs(TORUS.xi) <= 0.5 * np.max(TORUS.xi)
    diff = np.max(np.abs(tab.table - exact.table)[rows][:, cols], axis=1)
    assert np.max(diff / np.abs(x[rows]) ** 3) <= 1.0
    assert np.max(np.abs(tab.table[0])) <= 1e-9


def test_analytic_window_tames_x_derivatives():
    gev = weight_table(TORUS, PARAMS.with_(torus_window="gevrey"), 1.0, periodic=True, x_order=4)
    ana = weight_table(TORUS, PARAMS, 1.0, periodic=True, x_order=4)
    assert np.max(np.abs(ana.values[4])) <= 0.01 * np.max(np.abs(gev.values[4]))


def test_periodized_jets_converge_to_spectral_derivatives():
    errs = []
    for n in (128, 256, 512):
        grid = GridSpec(np.pi, n)
        tab = weight_table(grid, PARAMS.with_(torus_window="gevrey"), 1.0, periodic=True, x_order=1)
        errs.append(np.max(np.abs(spectral_dx(tab.table, grid, 1, axis=0) - tab.values[1])))
    assert errs[2] <= 1e-4
    assert errs[0] > errs[1] > errs[2]
    tab = weight_table(TORUS, PARAMS, 1.0, periodic=True, x_order=1)
    assert np.max(np.abs(spectral_dx(tab.table, TORUS, 1, axis=0) - tab.values[1])) <= 1e-6


def test_lambda2_estimate_scan_passes():
    rep = verify_lambda_estimates("lambda2", PARAMS.with_(h=10.0), 2, 2)
    assert rep.passed
    assert np.all(np.isfinite(rep.part_i.ratios)) and np.all(np.isfinite(rep.part_ii.ratios))


def test_lambda1_order_zero_scan():
    rep = verify_lambda_estimates("lambda1", PARAMS.with_(h=10.0), 3, 2)
    assert rep.passed
    assert np.all(np.isfinite(rep.order_zero.ratios[:, 1:]))
    assert np.all(rep.order_zero.ratios[:, 1:] > 0)


def test_zero_weight_scan_and_depth_limit():
    rep = verify_lambda_estimates("lambda2", PARAMS.with_(M2=0.0), 2, 2)
    assert np.all(rep.part_i.ratios == 0) and np.all(rep.part_ii.ratios == 0)
    with pytest.raises(ValueError):
        verify_lambda_estimates("lambda2", PARAMS, 5, 2)


def test_zero_weight_inverse_is_identity():
    inv = invert_e_lambda(TORUS, PARAMS.with_(M2=0.0, M1=0.0), 1.0)
    assert inv.n_terms == 1
    assert inv.r_norm <= 1e-13
    u = band_limited(TORUS, 0, 1.0)
    assert np.max(np.abs(inv.apply(u).values - u.values)) <= 1e-12


def test_h_sweep_and_inverse_residual():
    h0, rows = h_sweep(TORUS, PARAMS, 1.0, hs=(1, 2, 4, 8, 16, 32))
    norms = [r for _, r in rows]
    assert rows[0][1] > 1.0
    assert h0 is not None and h0 <= 64
    assert norms == sorted(norms, reverse=True)
    with pytest.raises(InversionDivergenceError):
        invert_e_lambda(TORUS, PARAMS.with_(h=1.0), 1.0)
    inv = invert_e_lambda(TORUS, PARAMS.with_(h=h0), 1.0)
    assert inv.r_norm < 0.5
    assert inv.residual <= 1e-6
    proj_err = np.linalg.norm(inv.forward @ inv.matrix - (inv.forward @ inv.matrix) @ (inv.forward @ inv.matrix), 2)
    assert proj_err <= 1e-6
    tab = weight_table(TORUS, PARAMS.with_(h=h0), 1.0, x_order=0)
    assert np.max(np.abs(tab.table)) > 0.1


def test_inverse_term_report():
    rep8 = inverse_term_report(TORUS, PARAMS.with_(h=8.0), 1.0)
    assert rep8.neumann_factor >= 5
    mismatch = [inverse_term_report(TORUS, PARAMS.with_(h=h), 1.0).leading_mismatch for h in (8.0, 16.0, 32.0)]
    assert mismatch[0] > mismatch[1] > mismatch[2]
    for h in (8.0, 16.0, 32.0):
        assert inverse_term_report(TORUS, PARAMS.with_(h=h), 1.0).symbolic_factor > 1


def test_q_pure_multiplier():
    p = PARAMS.with_(M2=0.0, M1=0.0, k=0.0, rho_prime=0.7)
    apply, inverse_apply, q = build_Q(TORUS, 0.3, p, 1.0)
    u = band_limited(TORUS, 1, 1.0)
    expected = np.exp(0.7 * bracket(TORUS.xi_fft, p.h) ** (1 / p.theta)) * u.coeffs()
    assert np.max(np.abs(apply(u).coeffs() - expected)) <= 1e-12 * np.max(np.abs(expected))
    assert np.max(np.abs(inverse_apply(apply(u)).values - u.values)) <= 1e-12 * np.max(np.abs(u.values))


def test_q_inverse_on_random_band_limited():
    p = PARAMS.with_(h=8.0, rho_prime=0.2, k=0.5)
    apply, inverse_apply, q = build_Q(TORUS, 0.0, p, 1.0)
    for seed in range(20):
        u = band_limited(TORUS, seed)
        back = inverse_apply(apply(u))
        assert np.max(np.abs(back.values - u.values)) <= 1e-6 * np.max(np.abs(u.values))
        w = u
        fwd = apply(inverse_apply(w))
        assert np.max(np.abs(fwd.values - w.values)) <= 1e-6 * np.max(np.abs(w.values))


def test_q_regularization_finite_and_monotone():
    p = PARAMS.with_(h=8.0, rho_prime=0.5)
    q = build_Q(TORUS, 0.0, p, 1.0)[2]
    norms = [q_regularization_norm(TORUS, 0.0, p, 1.0, d, qop=q) for d in (0.05, 0.1, 0.2)]
    assert all(np.isfinite(norms))
    assert norms[0] >= norms[1] >= norms[2]
