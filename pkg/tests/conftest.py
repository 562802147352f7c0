import numpy as np
import pytest

from nonlocal_scattering.hyperbolic import DiracOperator, WaveOperator
from nonlocal_scattering.kernels import bump_kernel
from nonlocal_scattering.lattice import GridSpec
from nonlocal_scattering.perturbed import PerturbedSystem


def bump_field(grid, center, radii, vec=None):
    n = np.arange(grid.nt)[:, None]
    j = np.arange(grid.nx)[None, :]
    r2 = ((n - center[0]) / radii[0]) ** 2 + ((j - center[1]) / radii[1]) ** 2
    prof = np.where(r2 < 1, (1 - r2) ** 3, 0.0)
    if vec is None:
        vec = np.ones(grid.n_components)
    return prof[:, :, None] * np.asarray(vec)[None, None, :]


def random_source(grid, rng, rows, cols, complex_=True):
    """Bump with random centre in the given row/column ranges and random components."""
    c = (rng.uniform(*rows), rng.uniform(*cols))
    r = (rng.uniform(2, 4), rng.uniform(2, 5))
    N = grid.n_components
    vec = rng.normal(size=N) + (1j * rng.normal(size=N) if complex_ else 0)
    return bump_field(grid, c, r, vec)


@pytest.fixture(scope="session")
def wave_grid():
    return GridSpec.from_counts(33, 97, tau_rows=(4, 28))


@pytest.fixture(scope="session")
def dirac_grid():
    return GridSpec.from_counts(33, 97, n_components=2, tau_rows=(4, 28))


@pytest.fixture(scope="session")
def wave_op(wave_grid):
    return WaveOperator(wave_grid)


@pytest.fixture(scope="session")
def dirac_op(dirac_grid):
    return DiracOperator(dirac_grid)


def small_system(kind="wave", seed=0, symmetry=None, real=True, preset=None):
    """35x65 grid with M = rows 1..33 (inside the dense cap) and a bump kernel."""
    N = 1 if kind == "wave" else 2
    g = GridSpec.from_counts(35, 65, n_components=N, tau_rows=(0, 34))
    if kind == "wave":
        V = 0.0 if preset is None else preset
        op = WaveOperator(g, V=V)
    else:
        op = DiracOperator(g)
    if symmetry is None:
        symmetry = "hermitian" if kind == "wave" else "gamma0"
    W = bump_kernel(g, ((12, 22), (24, 40)), rng=seed, symmetry=symmetry, real=real)
    S = PerturbedSystem(op, W)
    return S.with_lambda(S.lambda0 / 2)


def glue_system(kind="wave", seed=0, symmetry=None, real=True, nx=129):
    """Grid with room for the gluing strips on both sides of the kernel."""
    N = 1 if kind == "wave" else 2
    g = GridSpec.from_counts(41, nx, n_components=N, tau_rows=(6, 34))
    op = WaveOperator(g) if kind == "wave" else DiracOperator(g)
    if symmetry is None:
        symmetry = "hermitian" if kind == "wave" else "gamma0"
    mid = nx // 2
    W = bump_kernel(g, ((14, 24), (mid - 8, mid + 8)), rng=seed, symmetry=symmetry, real=real)
    S = PerturbedSystem(op, W)
    return S.with_lambda(S.lambda0 / 2)
