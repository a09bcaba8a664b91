import math
import warnings

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from wendytf.grid import make_grid
from wendytf.testfunctions import (
    ReferenceFunction,
    admissible_centers,
    assemble_basis,
    bessel_half_integer,
    build_basis,
    eval_reference,
    fft_frequencies,
    poly_l2_constant,
    psi_hat_closed_form,
    sph_jn_scaled,
)


def _quad_norm2(psi):
    val, _ = integrate.quad(lambda t: eval_reference(psi, t)[0] ** 2, -psi.radius, psi.radius,
                            epsabs=0, epsrel=1e-13, limit=200)
    return val


def test_l2_constant_small_case():
    C = poly_l2_constant(1.0, 1)
    assert C == pytest.approx(math.sqrt(15) / 4, rel=1e-15)
    unnormalized, _ = integrate.quad(lambda t: (1 - t * t) ** 2, -1, 1)
    assert unnormalized == pytest.approx(2 * 8 / 15, rel=1e-14)


def test_l2_constant_matches_quadrature_p16():
    raw, _ = integrate.quad(lambda t: (0.25 - t * t) ** 32, -0.5, 0.5, epsabs=0, epsrel=1e-13)
    assert poly_l2_constant(0.5, 16) == pytest.approx(1 / math.sqrt(raw), rel=1e-8)


@pytest.mark.parametrize("psi", [
    ReferenceFunction.poly(0.3, 2), ReferenceFunction.poly(1.7, 16), ReferenceFunction.poly(0.05, 40),
    ReferenceFunction.poly(2.0, 60), ReferenceFunction.bump(0.4), ReferenceFunction.bump(3.0, eta=2.5),
])
def test_unit_l2_norm(psi):
    assert _quad_norm2(psi) == pytest.approx(1.0, rel=1e-10)


def test_large_order_does_not_overflow():
    C = poly_l2_constant(10.0, 38)
    assert np.isfinite(C) and C > 0


def test_eval_reference_examples():
    psi = ReferenceFunction.poly(0.7, 16)
    assert eval_reference(psi, 0.7) == (0.0, 0.0)
    assert eval_reference(psi, -0.7) == (0.0, 0.0)
    assert eval_reference(psi, 3.0) == (0.0, 0.0)
    v, d = eval_reference(psi, 0.0)
    assert v == pytest.approx(psi.C * 0.7 ** 32, rel=1e-14) and d == 0.0
    bump = ReferenceFunction.bump(2.0, 9.0)
    v, d = eval_reference(bump, 0.0)
    assert v == pytest.approx(bump.C * math.exp(-9), rel=1e-14) and d == 0.0


@pytest.mark.parametrize("psi", [ReferenceFunction.poly(0.8, 5), ReferenceFunction.bump(0.8, 4.0)])
def test_reference_even_and_derivative(psi):
    t = np.linspace(-0.79, 0.79, 41)
    v, d = eval_reference(psi, t)
    v_neg, d_neg = eval_reference(psi, -t)
    np.testing.assert_array_equal(v, v_neg)
    np.testing.assert_array_equal(d, -d_neg)
    h = 1e-6
    fd = (eval_reference(psi, t + h)[0] - eval_reference(psi, t - h)[0]) / (2 * h)
    np.testing.assert_allclose(d, fd, rtol=1e-6, atol=1e-7 * np.abs(d).max())


def test_bessel_closed_forms():
    assert abs(bessel_half_integer(0, math.pi)) < 1e-16
    j1 = math.sin(1) - math.cos(1)
    assert bessel_half_integer(1, 1.0) == pytest.approx(math.sqrt(2 / math.pi) * j1, rel=1e-14)
    x = np.linspace(0.1, 30, 50)
    np.testing.assert_allclose(bessel_half_integer(0, x), np.sqrt(2 / (np.pi * x)) * np.sin(x), rtol=1e-13)


def test_bessel_small_argument_high_order():
    mpmath.mp.dps = 60
    exact = mpmath.besselj(mpmath.mpf(20) + mpmath.mpf(1) / 2, mpmath.mpf("0.1"))
    assert bessel_half_integer(20, 0.1) == pytest.approx(float(exact), rel=1e-10)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 40), st.floats(1e-3, 300))
def test_bessel_against_mpmath(p, x):
    mpmath.mp.dps = 40
    exact = float(mpmath.besselj(p + mpmath.mpf(1) / 2, x))
    got = bessel_half_integer(p, x)
    scale = max(abs(exact), float(mpmath.sqrt(2 / (mpmath.pi * x))) * 1e-12)
    assert abs(got - exact) <= 1e-10 * scale


def test_scaled_spherical_bessel_at_zero():
    for p in (0, 3, 12):
        expected = 1 / math.prod(range(1, 2 * p + 2, 2))
        assert sph_jn_scaled(p, 0.0) == pytest.approx(expected, rel=1e-14)


def _psi_hat_quad(p, r, T, n):
    psi = ReferenceFunction.poly(r, p)
    f = lambda t: eval_reference(psi, t)[0]
    with warnings.catch_warnings():
        # tiny high-frequency coefficients hit the roundoff floor; the test's absolute tolerance covers it
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        if n == 0:
            val, _ = integrate.quad(f, 0, r, epsabs=0, epsrel=1e-13, limit=400)
        else:
            val, _ = integrate.quad(f, 0, r, weight="cos", wvar=2 * math.pi * n / T,
                                    epsabs=1e-17, epsrel=1e-12, limit=400)
    return 2 * val / math.sqrt(T)


def test_psi_hat_zero_mode_example():
    assert psi_hat_closed_form(1, 1.0, 2.0, 0) == pytest.approx(2 * math.sqrt(15) / 4 / math.sqrt(2) * 2 / 3,
                                                                rel=1e-14)
    assert psi_hat_closed_form(1, 1.0, 2.0, 0) == pytest.approx(0.912871, abs=1e-6)


@pytest.mark.parametrize("p,r", [(8, 0.5), (16, 1.0), (22, 2.5)])
def test_psi_hat_matches_quadrature(p, r):
    T = 10.0
    for n in (0, 1, 3, 17, 60, 141, 333, 500):
        exact = _psi_hat_quad(p, r, T, n)
        got = psi_hat_closed_form(p, r, T, n)
        assert abs(got - exact) <= max(1e-8 * abs(exact), 1e-14)


def test_psi_hat_even_in_frequency():
    n = np.arange(1, 200)
    np.testing.assert_array_equal(psi_hat_closed_form(12, 0.3, 5.0, n), psi_hat_closed_form(12, 0.3, 5.0, -n))


def test_psi_hat_rejects_bad_order():
    with pytest.raises(ValueError):
        psi_hat_closed_form(41, 1.0, 2.0, 1)


def test_fft_frequency_order():
    np.testing.assert_array_equal(fft_frequencies(6), [0, 1, 2, -3, -2, -1])
    np.testing.assert_array_equal(fft_frequencies(5), [0, 1, 2, -2, -1])


def test_admissible_centers():
    g = make_grid(1.0, 10)
    np.testing.assert_array_equal(admissible_centers(g, 0.2), np.arange(2, 9))
    np.testing.assert_array_equal(admissible_centers(g, 0.5), [5])
    np.testing.assert_array_equal(admissible_centers(g, 0.2, stride=3), [2, 5, 8])
    assert len(admissible_centers(make_grid(1.0, 500), 2 / 500)) == 497
    with pytest.raises(ValueError):
        admissible_centers(g, 0.6)
    with pytest.raises(ValueError):
        admissible_centers(g, 0.25)


def test_basis_structure():
    g = make_grid(2.0, 200)
    m_r = 7
    basis = build_basis(ReferenceFunction.poly(m_r * g.dt, 16), g)
    assert basis.K == 200 - 2 * m_r + 1
    for k, c in enumerate(basis.centers):
        nz = np.nonzero(basis.phi[k])[0]
        assert nz.min() >= c - m_r and nz.max() <= c + m_r
        assert np.count_nonzero(basis.phi[k]) == 2 * m_r - 1
        window = basis.phi[k, c - m_r:c + m_r + 1]
        dwin = basis.phidot[k, c - m_r:c + m_r + 1]
        np.testing.assert_array_equal(window, window[::-1])
        np.testing.assert_array_equal(dwin, -dwin[::-1])
    assert np.max(np.abs(basis.phidot.sum(axis=1))) <= 1e-12
    const = np.full(g.M + 1, 3.7)
    assert np.max(np.abs(basis.phidot @ const)) <= 1e-12 * 3.7 * basis.K


def test_quadrature_weights_folded_in():
    g = make_grid(1.0, 20)
    psi = ReferenceFunction.poly(0.5, 4)
    basis = assemble_basis(psi, [10], g)
    v, _ = eval_reference(psi, g.points - 0.5)
    expected = v * g.dt
    expected[0] *= 0.5
    expected[-1] *= 0.5
    np.testing.assert_allclose(basis.phi[0], expected, rtol=1e-12, atol=0)


def test_inadmissible_centers_rejected():
    g = make_grid(1.0, 20)
    with pytest.raises(ValueError):
        assemble_basis(ReferenceFunction.poly(0.2, 4), [2], g)


def test_dft_of_sampled_row_matches_closed_form():
    T, M, p, m_r = 10.0, 1000, 16, 60
    g = make_grid(T, M)
    psi = ReferenceFunction.poly(m_r * g.dt, p)
    t = g.points[:-1]
    # periodic copy centered at 0
    samples = eval_reference(psi, np.where(t > T / 2, t - T, t))[0]
    coef = np.fft.fft(samples) * g.dt / math.sqrt(T)
    n = np.arange(M // 4 + 1)
    exact = psi_hat_closed_form(p, psi.radius, T, n)
    assert np.max(np.abs(coef[:M // 4 + 1].real - exact)) <= 1e-6 * np.abs(exact).max()


@pytest.mark.parametrize("M", [100, 200, 400])
def test_discrete_norm_converges(M):
    g = make_grid(1.0, M)
    psi = ReferenceFunction.bump(0.5)
    v = eval_reference(psi, g.points - 0.5)[0]
    assert abs(g.dt * np.sum(v ** 2) - 1) < 1e-6


def test_basis_csv(tmp_path):
    g = make_grid(1.0, 20)
    basis = build_basis(ReferenceFunction.poly(0.2, 4), g)
    basis.to_csv(tmp_path / "phi.csv")
    rows = (tmp_path / "phi.csv").read_text().splitlines()
    assert len(rows) == basis.K + 1
    back = np.loadtxt(tmp_path / "phi.csv", delimiter=",", skiprows=1)[:, 1:]
    np.testing.assert_array_equal(back, basis.phi)
