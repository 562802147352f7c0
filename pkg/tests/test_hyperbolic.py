import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nonlocal_scattering.hyperbolic import (GAMMA0, DiracOperator, WaveOperator, build_operator,
                                            check_gamma_relations, locality_check)
from nonlocal_scattering.lattice import GridMismatch, GridSpec, inner_product

from conftest import bump_field

G1 = GridSpec.from_counts(17, 33)
G2 = GridSpec.from_counts(17, 33, n_components=2)


def interior(grid, rng, complex_=True, width=2):
    f = rng.normal(size=grid.shape) + (1j * rng.normal(size=grid.shape) if complex_ else 0)
    f[:width] = f[-width:] = 0
    f[:, :width] = f[:, -width:] = 0
    return f


def test_quadratic_in_time():
    t, _ = G1.mesh()
    f = (t ** 2)[:, :, None]
    Df = WaveOperator(G1).apply(f)
    assert np.allclose(Df[1:-1, 1:-1], 2.0, rtol=0, atol=1e-10)
    assert np.all(Df[[0, -1]] == 0)


@pytest.mark.parametrize("shape", [np.sin, lambda s: np.exp(-s * s)])
def test_characteristic_functions_are_solutions(shape):
    t, x = G1.mesh()
    f = shape(3 * (t - x))[:, :, None]
    assert np.abs(WaveOperator(G1).apply(f)[1:-1, 1:-1]).max() < 1e-10


@pytest.mark.parametrize("omega,k,m", [(1.3, 2.1, 1.0), (5.0, 0.7, 2.5)])
def test_plane_wave_matches_discrete_symbol(omega, k, m):
    t, x = G1.mesh()
    h = G1.h
    f = np.exp(1j * (omega * t - k * x))[:, :, None]
    Df = WaveOperator(G1, V=m * m).apply(f)
    symbol = (2 * np.cos(omega * h) - 2 * np.cos(k * h)) / h ** 2 + m * m
    assert np.allclose(Df[1:-1, 1:-1], symbol * f[1:-1, 1:-1], rtol=1e-10, atol=0)


def test_gamma_and_conjugation_relations():
    checks = check_gamma_relations()
    assert all(checks.values())


def test_dirac_needs_two_components():
    with pytest.raises(ValueError):
        DiracOperator(G1)


def test_grid_mismatch():
    with pytest.raises(GridMismatch):
        WaveOperator(G1).apply(np.zeros((5, 5, 1)))


@pytest.mark.parametrize("op", [WaveOperator(G1), WaveOperator(G1, V=0.7),
                                DiracOperator(G2), DiracOperator(G2, V=1.5)])
def test_adjoint_identity_and_involution(op):
    rng = np.random.default_rng(4)
    f = interior(op.grid, rng)
    g = interior(op.grid, rng)
    lhs = inner_product(op.grid, op.adjoint().apply(g), f)
    rhs = inner_product(op.grid, g, op.apply(f))
    assert abs(lhs - rhs) < 1e-12 * abs(rhs)
    A = op.sparse()
    B = op.adjoint().adjoint().sparse()
    assert abs(A - B).max() == 0


def test_wave_with_real_potential_is_self_adjoint_on_interior():
    op = WaveOperator(G1, V=0.3)
    f = interior(G1, np.random.default_rng(6))
    assert np.abs(op.adjoint().apply(f) - op.apply(f))[1:-1].max() < 1e-9


def test_dirac_adjoint_is_gamma0_conjugate():
    op = DiracOperator(G2, V=0.8)   # gamma0 V Hermitian for V = m * 1
    assert op.gamma0_V_hermitian()
    f = interior(G2, np.random.default_rng(7))
    g0 = lambda u: np.einsum("ab,...b->...a", GAMMA0, u)
    lhs = op.adjoint().apply(f)
    rhs = g0(op.apply(g0(f)))
    assert np.abs(lhs - rhs)[1:-1].max() < 1e-10 * np.abs(rhs).max()


def test_dirac_real_for_real_potential():
    op = DiracOperator(G2, V=0.5)
    f = interior(G2, np.random.default_rng(8), complex_=False)
    assert np.abs(op.apply(f).imag).max() == 0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.complex_numbers(max_magnitude=10), st.complex_numbers(max_magnitude=10))
def test_linearity(seed, a, b):
    rng = np.random.default_rng(seed)
    for op in (WaveOperator(G1, V=0.4), DiracOperator(G2, V=0.4)):
        f, g = interior(op.grid, rng), interior(op.grid, rng)
        lhs = op.apply(a * f + b * g)
        rhs = a * op.apply(f) + b * op.apply(g)
        assert np.abs(lhs - rhs).max() <= 1e-12 * max(np.abs(lhs).max(), 1.0)


@pytest.mark.parametrize("op", [WaveOperator(G1), DiracOperator(G2)])
def test_locality(op):
    g = op.grid
    imp = np.zeros(g.shape)
    imp[8, 16, 0] = 1.0
    assert locality_check(op, imp)
    assert locality_check(op, np.zeros(g.shape))
    assert locality_check(op, bump_field(g, (8, 16), (3, 4)))


def test_build_operator_presets():
    assert build_operator(G1, {"kind": "wave"}).is_free
    op = build_operator(G1, {"kind": "wave", "preset": "mass", "m": 2.0})
    assert np.allclose(op.V, 4.0)
    op = build_operator(G1, {"kind": "wave", "preset": "gaussian-potential", "amp": 1.0, "width": 0.2})
    assert op.V.max() == pytest.approx(1.0, abs=1e-2)
    assert build_operator(G1, {"kind": "dirac"}).grid.n_components == 2
    with pytest.raises(ValueError):
        build_operator(G1, {"kind": "klein"})
