import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from nonlocal_scattering import star
from nonlocal_scattering.star import (BumpSymbol, GammaOverflow, GaussianSymbol, StarProductSpec,
                                      cutoff, gamma, gamma_inverse, gamma_prime)

MOYAL = StarProductSpec(1.0, GaussianSymbol((0.1, -0.1), 0.5))
LOCAL = StarProductSpec(1.0, BumpSymbol((0.05, 0.0), 0.15), "local-nc")


# -- cutoff ------------------------------------------------------------------

@pytest.mark.parametrize("v, expect", [
    ((0.0, 0.0), 1.0), ((0.3, 0.4), 1.0), ((0.0, 0.5), 1.0),
    ((1.0, 0.0), 0.0), ((0.8, 0.8), 0.0), ((3.0, -2.0), 0.0),
])
def test_cutoff_values(v, expect):
    assert cutoff(np.array(v)) == expect


def test_cutoff_monotone_in_radius():
    r = np.linspace(0.0, 1.2, 200)
    c = cutoff(np.stack([r, np.zeros_like(r)], -1))
    assert np.all(np.diff(c) <= 0)
    assert np.all((c >= 0) & (c <= 1))


# -- symbols -------------------------------------------------------------------

def _fourier_quad(w, k, lo, hi):
    """Direct 2D quadrature of int exp(-2 pi i q.k) w(q) dq."""
    def part(fn):
        return integrate.dblquad(lambda q2, q1: fn(q1, q2), lo[0], hi[0], lo[1], hi[1],
                                 epsabs=1e-12, epsrel=1e-10)[0]
    re = part(lambda a, b: np.cos(2 * np.pi * (a * k[0] + b * k[1])) * w(np.array([a, b])))
    im = part(lambda a, b: -np.sin(2 * np.pi * (a * k[0] + b * k[1])) * w(np.array([a, b])))
    return re + 1j * im


@pytest.mark.parametrize("k", [(0.0, 0.0), (0.3, -0.2), (0.7, 0.4)])
def test_gaussian_fourier_closed_form(k):
    w = GaussianSymbol((0.1, -0.1), 0.5)
    c, R = w.support
    got = w.fourier(np.array(k))
    ref = _fourier_quad(w, k, c - R, c + R)
    assert abs(got - ref) <= 1e-9


@pytest.mark.parametrize("k", [(0.0, 0.0), (1.5, -2.0), (4.0, 3.0)])
def test_bump_fourier_gauss_legendre(k):
    w = BumpSymbol((0.05, 0.0), 0.15)
    half = w.radius
    c = np.asarray(w.center)
    ref = _fourier_quad(w, k, c - half, c + half)
    assert abs(w.fourier(np.array(k)) - ref) <= 1e-9 * max(abs(ref), w.integral())


def test_bump_is_compact():
    w = BumpSymbol((0.05, 0.0), 0.15)
    assert w(np.array([0.05 + 0.151, 0.0])) == 0
    assert w(np.array([0.05, 0.0])) > 0


def test_spec_validation():
    with pytest.raises(ValueError):
        StarProductSpec(1.0, GaussianSymbol(), "other")
    with pytest.raises(ValueError):
        StarProductSpec(0.0, GaussianSymbol())
    with pytest.raises(ValueError):
        StarProductSpec(1.0, BumpSymbol((0.3, 0.0), 0.3), "local-nc")


# -- Moyal -----------------------------------------------------------------------

@pytest.mark.parametrize("theta0", [0.5, 1.0, 2.0])
def test_moyal_diagonal_is_symbol_integral(theta0):
    spec = StarProductSpec(theta0, GaussianSymbol((0.1, -0.1), 0.5))
    x = np.array([[0.2, 0.3], [-1.0, 0.5], [3.0, 2.0]])
    expect = 2 * np.pi * 0.25 / theta0 ** 2  # int w / |det theta|
    np.testing.assert_allclose(star.moyal_limit_kernel(spec, x, x), expect, rtol=1e-14)


def test_moyal_envelope_follows_symbol_transform():
    spec = MOYAL
    x = np.array([0.2, 0.3])
    d = np.array([[0.1, 0.0], [0.4, -0.3], [1.0, 0.5]])
    k = star.moyal_limit_kernel(spec, np.broadcast_to(x, d.shape), x + d)
    w_hat = np.abs(spec.symbol.fourier((spec.theta_inv @ d.T).T))
    np.testing.assert_allclose(np.abs(k), w_hat / spec.abs_det, rtol=1e-13)


def test_moyal_cutoff_converges():
    x = np.array([[0.2, 0.3], [0.0, 0.0]])
    y = np.array([[0.5, -0.1], [0.3, 0.2]])
    lim = star.moyal_limit_kernel(MOYAL, x, y)
    gaps = [np.abs(star.moyal_eps_kernel(MOYAL, e, x, y) - lim).max() for e in (0.4, 0.2, 0.1)]
    assert gaps[0] > gaps[1] > gaps[2] or gaps[2] < 1e-14
    assert gaps[-1] < 1e-12


def test_moyal_cutoff_kernel_is_compact():
    x = np.array([[0.0, 0.0]])
    eps = 0.4
    far = np.array([[1.0 / eps + 0.01, 0.0]])
    assert star.moyal_eps_kernel(MOYAL, eps, x, far)[0] == 0


def test_moyal_eps_kernel_reports_quadrature_error():
    x = np.array([[0.2, 0.3]])
    y = np.array([[0.5, -0.1]])
    _, err = star.moyal_eps_kernel(MOYAL, 0.2, x, y, with_error=True)
    assert err[0] < 1e-9
    with pytest.raises(star.QuadratureError):
        star.moyal_eps_kernel(MOYAL, 0.2, x, y, tol=1e-30, min_points=3)


# -- gamma --------------------------------------------------------------------------

@settings(max_examples=100, deadline=None)
@given(u=st.floats(-0.99, 0.99))
def test_gamma_odd(u):
    assert gamma(-u) == -gamma(u)


@settings(max_examples=100, deadline=None)
@given(u=st.floats(-0.99, 0.99))
def test_gamma_inverse_round_trip(u):
    assert gamma_inverse(gamma(u)) == pytest.approx(u, abs=1e-12)


def test_gamma_increasing_and_derivative_bound():
    u = np.linspace(-0.99, 0.99, 4001)
    assert np.all(np.diff(gamma(u)) > 0)
    assert np.all(gamma_prime(u) >= gamma_prime(0.0) * (1 - 1e-15))


def test_gamma_prime_matches_finite_difference():
    u = np.array([-0.8, -0.3, 0.0, 0.2, 0.45, 0.55, 0.7, 0.9])
    h = 1e-6
    fd = (gamma(u + h) - gamma(u - h)) / (2 * h)
    np.testing.assert_allclose(gamma_prime(u), fd, rtol=1e-6)


def test_gamma_continuous_at_branch_point():
    below, above = gamma(0.5 - 1e-12), gamma(0.5 + 1e-12)
    assert abs(above - below) < 1e-9 * abs(below)


def test_gamma_overflow_guard():
    with pytest.raises(GammaOverflow):
        gamma(0.9999)
    with pytest.raises(GammaOverflow):
        gamma_prime(-0.9999)


# -- locally noncommutative ------------------------------------------------------------

@pytest.mark.parametrize("x, y", [
    ((1.2, 0.0), (0.0, 0.0)),
    ((0.0, 0.0), (0.0, -1.0)),
    ((-1.5, 2.0), (1.0, 1.0)),
])
def test_local_nc_vanishes_outside_box(x, y):
    k = star.local_nc_kernel(LOCAL, np.array([x]), np.array([y]))
    assert k[0] == 0
    k = star.local_nc_kernel(LOCAL, np.array([x]), np.array([y]), eps=0.2, tol=1e-7)
    assert k[0] == 0


def test_local_nc_diagonal_profile():
    """k(x, x) = gamma'(x1) gamma'(x2) int phi / |det theta| with phi = w o gamma^-1."""
    w = LOCAL.symbol
    c = np.asarray(w.center)
    lo, hi = gamma(c - w.radius), gamma(c + w.radius)
    phi_int = integrate.dblquad(lambda v2, v1: w(gamma_inverse(np.array([v1, v2]))),
                                lo[0], hi[0], lo[1], hi[1], epsabs=1e-12, epsrel=1e-10)[0]
    x = np.array([[0.0, 0.0], [0.3, -0.2], [0.6, 0.1], [-0.7, 0.5]])
    k = star.local_nc_kernel(LOCAL, x, x)
    expect = gamma_prime(x).prod(axis=-1) * phi_int / LOCAL.abs_det
    np.testing.assert_allclose(k, expect, rtol=1e-8)


def test_local_nc_diverges_toward_boundary():
    u = np.array([0.0, 0.5, 0.8, 0.9, 0.95])
    x = np.stack([u, np.zeros_like(u)], -1)
    k = np.abs(star.local_nc_kernel(LOCAL, x, x))
    assert np.all(np.diff(k) > 0)
    assert k[-1] > 1e10 * k[0]


def test_local_nc_cutoff_converges():
    x = np.array([[0.0, 0.0]])
    y = np.array([[0.02, 0.01]])
    lim = star.local_nc_kernel(LOCAL, x, y)
    gaps = [abs(star.local_nc_kernel(LOCAL, x, y, eps=e, tol=1e-7) - lim)[0] for e in (0.4, 0.1)]
    assert gaps[1] <= gaps[0]
    assert gaps[1] < 1e-8 * abs(lim[0])


def test_star_kernel_dispatch():
    x = np.array([[0.1, 0.1]])
    np.testing.assert_array_equal(star.star_kernel(MOYAL, x, x), star.moyal_limit_kernel(MOYAL, x, x))
    np.testing.assert_array_equal(star.star_kernel(LOCAL, x, x), star.local_nc_kernel(LOCAL, x, x))
    with pytest.raises(ValueError):
        star.local_nc_kernel(MOYAL, x, x)


def test_lattice_kernel_requires_cutoff(wave_grid):
    with pytest.raises(ValueError):
        star.lattice_kernel(wave_grid, ((10, 14), (40, 44)), {"type": "moyal"})


def test_lattice_kernel_norm(wave_grid):
    W = star.lattice_kernel(wave_grid, ((10, 14), (40, 44)),
                            {"type": "moyal", "eps": 0.4, "norm": 0.5, "quad_tol": 1e-7})
    assert W.operator_norm() == pytest.approx(0.5, rel=1e-12)
