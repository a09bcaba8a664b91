import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import clean_data
from wendytf.grid import NoiseSpec, Trajectory, add_noise, make_grid
from wendytf.integration_error import (
    ConsistencyError,
    End,
    ErrorCurve,
    EulerMaclaurinConfig,
    bernoulli_even,
    bernoulli_even_exact,
    build_I_vector,
    choose_truncation_order,
    ehat_curve,
    endpoint_derivative,
    estimate_eint,
    one_sided_weights,
    psi_hat_vector,
    residual_decomposition,
    true_eint_curve,
)
from wendytf.regression import assemble_weak_system
from wendytf.systems import BENCHMARK_SYSTEMS, builtin_system, simulate
from wendytf.testfunctions import ReferenceFunction, build_basis


def _dft_scale(u, g, p, r, cfg=EulerMaclaurinConfig()):
    """Magnitude of the summed terms, the natural reference for roundoff in the transform."""
    return np.abs(psi_hat_vector(p, r, g) * build_I_vector(u, g, cfg)).sum() / math.sqrt(g.T)


def _bernoulli_oracle(n):
    # Akiyama-Tanigawa, exact rationals
    a = [Fraction(0)] * (n + 1)
    for m in range(n + 1):
        a[m] = Fraction(1, m + 1)
        for j in range(m, 0, -1):
            a[j - 1] = j * (a[j - 1] - a[j])
    return a[0]


def test_bernoulli_table():
    assert bernoulli_even(1) == 1 / 6
    assert bernoulli_even(2) == -1 / 30
    assert bernoulli_even(3) == 1 / 42
    for s in range(1, 9):
        assert bernoulli_even_exact(s) == _bernoulli_oracle(2 * s)
    with pytest.raises(ValueError):
        bernoulli_even(9)


def test_config_defaults_and_limits():
    assert EulerMaclaurinConfig(1).mu == (2, 1)
    assert EulerMaclaurinConfig(3).mu == (6, 5, 4, 3, 2, 1)
    with pytest.raises(ValueError):
        EulerMaclaurinConfig(5)
    with pytest.raises(ValueError):
        EulerMaclaurinConfig(1, (2,))


def test_stencil_weights_example():
    np.testing.assert_array_equal(one_sided_weights(1, 3), [-1.5, 2.0, -0.5])


def test_endpoint_derivative_examples():
    g = make_grid(1.0, 20)
    t = g.points
    assert endpoint_derivative(t ** 2, g, 1, 2, End.LEFT) == pytest.approx(0.0, abs=1e-12)
    for mu in (1, 3, 6):
        assert endpoint_derivative(np.full(21, 4.2), g, 1, mu, "right") == pytest.approx(0.0, abs=1e-10)
    with pytest.raises(ValueError):
        endpoint_derivative(t[:3], g, 2, 2, End.LEFT)


def test_second_derivative_first_order_rate():
    errs = []
    for M in (100, 200, 400):
        g = make_grid(1.0, M)
        errs.append(abs(endpoint_derivative(g.points ** 3, g, 2, 1, End.RIGHT) - 6.0))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    np.testing.assert_allclose(rates, 1.0, atol=0.05)


@pytest.mark.parametrize("l", [1, 2, 3, 4])
@pytest.mark.parametrize("mu", [1, 2, 3, 5])
@pytest.mark.parametrize("end", list(End))
def test_stencils_exact_on_polynomials(l, mu, end, rng):
    g = make_grid(2.0, 40)
    t = g.points
    deg = mu + l - 1
    coeffs = rng.standard_normal(deg + 1)
    u = np.polynomial.polynomial.polyval(t, coeffs)
    dcoef = np.polynomial.polynomial.polyder(coeffs, l)
    at = 0.0 if end is End.LEFT else g.T
    exact = np.polynomial.polynomial.polyval(at, dcoef)
    got = endpoint_derivative(u, g, l, mu, end)
    assert abs(got - exact) <= 1e-10 * max(1.0, abs(exact)) * 10 ** l


def test_I_vector_constant_is_zero():
    g = make_grid(3.0, 30)
    assert np.all(build_I_vector(np.full(31, 2.5), g, EulerMaclaurinConfig(2)) == 0)


def test_I_vector_linear_hand_evaluation():
    g = make_grid(1.0, 16)
    I = build_I_vector(g.points, g, EulerMaclaurinConfig(1))
    n = np.fft.fftfreq(16, 1 / 16)
    expected = 1 + g.dt ** 2 / 12 * (2j * np.pi * n) ** 2
    np.testing.assert_allclose(I, expected, rtol=1e-12, atol=1e-12)


def test_estimate_constant_data_is_zero():
    g = make_grid(1.0, 40)
    assert np.all(estimate_eint(np.full(41, -3.0), g, 16, 5 * g.dt) == 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(8, 64), st.integers(0, 2 ** 31), st.integers(1, 3))
def test_fft_matches_dense_dft(M, seed, S):
    rng = np.random.default_rng(seed)
    g = make_grid(float(rng.uniform(0.5, 5)), M)
    u = rng.standard_normal(M + 1)
    cfg = EulerMaclaurinConfig(S)
    if 2 * S + max(cfg.mu) > M:
        return
    for m_r in range(2, M // 2 + 1, max(1, M // 10)):
        fast = estimate_eint(u, g, 8, m_r * g.dt, cfg)
        dense = estimate_eint(u, g, 8, m_r * g.dt, cfg, method="dense")
        assert np.max(np.abs(fast - dense)) <= 1e-10 * _dft_scale(u, g, 8, m_r * g.dt, cfg)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(-5, 5, allow_subnormal=False), st.floats(-5, 5, allow_subnormal=False))
def test_estimator_is_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    g = make_grid(2.0, 60)
    u, v = rng.standard_normal((2, 61))
    r = 7 * g.dt
    lhs = estimate_eint(a * u + b * v, g, 16, r)
    rhs = a * estimate_eint(u, g, 16, r) + b * estimate_eint(v, g, 16, r)
    scale = abs(a) * _dft_scale(u, g, 16, r) + abs(b) * _dft_scale(v, g, 16, r)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * scale


def test_inadmissible_radius_rejected():
    g = make_grid(1.0, 40)
    with pytest.raises(ValueError):
        estimate_eint(np.ones(41), g, 16, g.dt)
    with pytest.raises(ValueError):
        estimate_eint(np.ones(41), g, 16, 21 * g.dt)


def test_unknown_method_rejected():
    g = make_grid(1.0, 40)
    with pytest.raises(ValueError):
        estimate_eint(np.ones(41), g, 16, 4 * g.dt, method="slow")


def test_ehat_curve_scaling_and_shape():
    _, clean = clean_data("logistic")
    curve = ehat_curve(clean, 16)
    assert curve.steps[0] == 2 and curve.steps[-1] == 500
    np.testing.assert_array_equal(curve.counts, 1001 - 2 * curve.steps)
    doubled = ehat_curve(Trajectory(clean.grid, 2 * clean.values), 16)
    np.testing.assert_allclose(doubled.values, 2 * curve.values, rtol=1e-12)
    single = estimate_eint(clean.column(0), clean.grid, 16, 0.3)
    assert curve.at(0.3) == pytest.approx(np.linalg.norm(single) / math.sqrt(len(single)), rel=1e-14)


def test_ehat_curve_decays_then_flattens():
    _, clean = clean_data("logistic")
    v = ehat_curve(clean, 16).log_values()
    assert v[0] - v[20] > 5 * math.log(10)
    tail = v[100:]
    assert tail.max() - tail.min() < v[0] - v[20]


def test_true_error_zero_field():
    system = builtin_system("duffing").with_params(np.zeros(4))
    grid = make_grid(20.0, 200)
    clean = simulate(system, grid=grid)
    curve = true_eint_curve(system, clean, 16)
    assert curve.values.max() <= 1e-12 * np.abs(clean.values).max()


def test_true_error_reaches_roundoff_floor():
    system, clean = clean_data("logistic")
    assert true_eint_curve(system, clean, 16).values.min() <= 1e-10


def test_true_error_improves_with_order():
    system, clean = clean_data("logistic")
    steps = [8, 12]
    vals = [true_eint_curve(system, clean, p, steps=steps).values for p in (8, 10, 12, 14)]
    for a, b in zip(vals[:-1], vals[1:]):
        assert np.all(b <= a * 1.01)


def test_true_curve_matches_weak_system():
    system, clean = clean_data("fitzhugh_nagumo")
    m = 30
    basis = build_basis(ReferenceFunction.poly(m * clean.grid.dt, 16), clean.grid)
    ws = assemble_weak_system(system, clean, basis)
    direct = np.linalg.norm(ws.G @ system.w_star - ws.b) / math.sqrt(basis.K)
    assert true_eint_curve(system, clean, 16, steps=[m]).values[0] == pytest.approx(direct, rel=1e-6)


@pytest.mark.parametrize("name", BENCHMARK_SYSTEMS)
def test_residual_decomposition_sums(name, rng):
    system, clean = clean_data(name)
    noisy = add_noise(clean, NoiseSpec(0.2, seed=5))
    basis = build_basis(ReferenceFunction.poly(25 * clean.grid.dt, 16), clean.grid)
    w = system.w_star * (1 + 0.3 * rng.standard_normal(system.n_params))
    terms = residual_decomposition(system, clean, noisy, w, basis)
    ws = assemble_weak_system(system, noisy, basis)
    resid = ws.G @ w - ws.b
    assert np.linalg.norm(terms.total() - resid) <= 1e-12 * np.linalg.norm(resid)


def test_residual_decomposition_collapses_on_truth():
    system, clean = clean_data("duffing")
    basis = build_basis(ReferenceFunction.poly(20 * clean.grid.dt, 16), clean.grid)
    terms = residual_decomposition(system, clean, clean, system.w_star, basis)
    for part in (terms.e_theta, terms.r0, terms.b_eps):
        assert np.all(part == 0)
    assert np.linalg.norm(terms.e_int) > 0


def test_truncation_order_selection():
    g = make_grid(10.0, 1000)
    assert choose_truncation_order(np.full(1001, 1.0), g) == 1
    for name in BENCHMARK_SYSTEMS:
        _, clean = clean_data(name)
        for i in range(clean.d):
            assert choose_truncation_order(clean.column(i), clean.grid) == 1
    orders = []
    for M in (400, 100, 40, 22):
        g = make_grid(math.pi, M)
        orders.append(choose_truncation_order(np.sin(10 * g.points) + g.points, g))
    assert orders == sorted(orders) and orders[-1] > 1


def test_curve_csv(tmp_path):
    curve = ErrorCurve(np.array([0.1, 0.2]), np.array([1e-3, 1e-5]), np.array([9, 7]), "true", 0.05)
    curve.to_csv(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "r,K,value,kind" and lines[1].endswith(",true")
    np.testing.assert_array_equal(curve.steps, [2, 4])


def test_imaginary_residue_guard(monkeypatch):
    import wendytf.integration_error as ie

    g = make_grid(1.0, 32)
    u = np.linspace(0, 1, 33) ** 2
    monkeypatch.setattr(ie, "_spectrum", lambda psi_hat, I, M: psi_hat * I * (1 + 1j))
    with pytest.raises(ConsistencyError):
        ie.estimate_eint(u, g, 8, 4 * g.dt)
