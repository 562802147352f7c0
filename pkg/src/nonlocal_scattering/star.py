"""Star-product kernels in two dimensions.

Fourier convention: hat w(k) = int exp(-2 pi i q.k) w(q) dq.

The Moyal product with deformation matrix theta,
    (w * f)(x) = int dp int dz exp(2 pi i p.z) w(x + theta p) f(x + z),
has the integral kernel
    k(x, y) = |det theta|^-1 exp(2 pi i x.theta^-1 y) hat w(theta^-1 (y - x)).
Its cutoff version multiplies the integrand by chi(eps p) chi(eps z), which
leaves a compactly supported kernel computed here by quadrature in p.

The locally noncommutative product conjugates the Moyal product by the
coordinate map gamma acting on each coordinate of the box K = (-1, 1)^2, and
vanishes whenever x or y lies outside K.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

E2 = np.exp(2.0)
CLAMP = 1.0 - 1e-3


class QuadratureError(RuntimeError):
    """Richardson estimate of the oscillatory quadrature above tolerance."""


class GammaOverflow(ValueError):
    """Evaluation point too close to the boundary of K for floating point."""


# -- cutoff -----------------------------------------------------------------

def _smooth_step(s):
    """C-infinity step: 0 for s <= 0, 1 for s >= 1."""
    s = np.asarray(s, dtype=float)
    a = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
    b = np.where(s < 1, np.exp(-1.0 / np.where(s < 1, 1.0 - s, 1.0)), 0.0)
    return a / (a + b)


def cutoff(v):
    """Radial cutoff on R^2: 1 for |v| <= 1/2, 0 for |v| >= 1, smooth between."""
    r = np.linalg.norm(np.asarray(v, dtype=float), axis=-1)
    return 1.0 - _smooth_step(2.0 * r - 1.0)


# -- symbols ----------------------------------------------------------------

@dataclass(frozen=True)
class GaussianSymbol:
    """w(q) = exp(-|q - c|^2 / 2 s^2); negligible beyond `reach` widths."""
    center: tuple = (0.0, 0.0)
    width: float = 0.5
    reach: float = 9.0

    def __call__(self, q):
        d = np.asarray(q, dtype=float) - np.asarray(self.center)
        return np.exp(-0.5 * (d ** 2).sum(axis=-1) / self.width ** 2)

    def fourier(self, k):
        k = np.asarray(k, dtype=float)
        s = self.width
        return (2 * np.pi * s * s * np.exp(-2 * np.pi ** 2 * s * s * (k ** 2).sum(axis=-1))
                * np.exp(-2j * np.pi * (k * np.asarray(self.center)).sum(axis=-1)))

    @property
    def support(self):
        """(center, radius) of a disc outside which w is below double precision."""
        return np.asarray(self.center, float), self.reach * self.width

    @property
    def scale(self):
        """Length over which w varies."""
        return self.width

    def integral(self):
        return 2 * np.pi * self.width ** 2


@dataclass(frozen=True)
class BumpSymbol:
    """Product of exp(-1/(1 - s^2)) bumps, exactly zero outside a square of half-width r."""
    center: tuple = (0.0, 0.0)
    radius: float = 0.4
    quad_points: int = 96

    def __call__(self, q):
        s = (np.asarray(q, dtype=float) - np.asarray(self.center)) / self.radius
        inside = np.all(np.abs(s) < 1, axis=-1)
        ss = np.where(np.abs(s) < 1, s, 0.0)
        val = np.exp(-1.0 / (1.0 - ss ** 2)).prod(axis=-1)
        return np.where(inside, val, 0.0)

    def _nodes(self):
        z, wz = np.polynomial.legendre.leggauss(self.quad_points)
        c = np.asarray(self.center)
        u1 = c[0] + self.radius * z
        u2 = c[1] + self.radius * z
        Q = np.stack(np.meshgrid(u1, u2, indexing="ij"), axis=-1)
        Wq = np.outer(wz, wz) * self.radius ** 2
        return Q, Wq

    def fourier(self, k):
        Q, Wq = self._nodes()
        vals = self(Q) * Wq
        k = np.asarray(k, dtype=float)
        ph = np.exp(-2j * np.pi * np.einsum("...c,ijc->...ij", k, Q))
        return (ph * vals).sum(axis=(-2, -1))

    @property
    def support(self):
        return np.asarray(self.center, float), self.radius * np.sqrt(2.0)

    @property
    def scale(self):
        return self.radius / 4.0

    def integral(self):
        Q, Wq = self._nodes()
        return float((self(Q) * Wq).sum())


def symplectic(theta0):
    return theta0 * np.array([[0.0, 1.0], [-1.0, 0.0]])


@dataclass(frozen=True)
class StarProductSpec:
    theta0: float = 1.0
    symbol: object = GaussianSymbol()
    variant: str = "moyal"

    def __post_init__(self):
        if self.variant not in ("moyal", "local-nc"):
            raise ValueError(f"unknown variant {self.variant!r}")
        th = self.theta
        if not np.allclose(th, -th.T) or abs(np.linalg.det(th)) == 0:
            raise ValueError("theta must be antisymmetric and invertible")
        if self.variant == "local-nc":
            c, r = self.symbol.support
            if np.any(np.abs(c) + r / np.sqrt(2.0) >= 0.5):
                raise ValueError("local-nc symbol must be supported inside |u| < 1/2")

    @property
    def theta(self):
        return symplectic(self.theta0)

    @property
    def theta_inv(self):
        return np.linalg.inv(self.theta)

    @property
    def abs_det(self):
        return abs(float(np.linalg.det(self.theta)))


# -- Moyal kernels ------------------------------------------------------------

def moyal_limit_kernel(spec: StarProductSpec, x, y, symbol=None):
    """Closed-form Moyal kernel at points x, y (arrays (..., 2))."""
    w = spec.symbol if symbol is None else symbol
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    ti = spec.theta_inv
    arg = np.einsum("ab,...b->...a", ti, y - x)
    phase = np.exp(2j * np.pi * np.einsum("...a,ab,...b->...", x, ti, y))
    return phase * w.fourier(arg) / spec.abs_det


def _trapezoid_2d(f, lo, hi, n):
    p1 = np.linspace(lo[0], hi[0], n)
    p2 = np.linspace(lo[1], hi[1], n)
    P = np.stack(np.meshgrid(p1, p2, indexing="ij"), axis=-1)
    wts = np.ones(n)
    wts[[0, -1]] = 0.5
    W = np.outer(wts, wts) * (p1[1] - p1[0]) * (p2[1] - p2[0])
    return (f(P) * W).sum(axis=(-2, -1))


def moyal_eps_kernel(spec: StarProductSpec, eps, x, y, symbol=None, tol=1e-9, min_points=33,
                     with_error=False):
    """Cutoff Moyal kernel chi(eps(y-x)) int dp exp(2 pi i p.(y-x)) chi(eps p) w(x + theta p).

    Trapezoid rule over the effective p-support with at least 8 points per
    oscillation; the result at n points is compared with the one at 2n - 1
    points and QuadratureError is raised above `tol` relative to the kernel
    scale |det theta|^-1 int |w|.
    """
    w = spec.symbol if symbol is None else symbol
    x = np.atleast_2d(np.asarray(x, float))
    y = np.atleast_2d(np.asarray(y, float))
    x, y = np.broadcast_arrays(x, y)
    shape = x.shape[:-1]
    x = x.reshape(-1, 2)
    y = y.reshape(-1, 2)
    th = spec.theta
    ti = spec.theta_inv
    c, R = w.support
    # |theta^-1 v| <= |v| * ||theta^-1||
    rp = R * np.linalg.norm(ti, 2)
    scale = abs(w.integral()) / spec.abs_det
    out = np.zeros(len(x), complex)
    err = np.zeros(len(x))
    for i in range(len(x)):
        d = y[i] - x[i]
        outer = float(cutoff(eps * d))
        if outer == 0.0:
            continue
        pc = ti @ (c - x[i])
        lo = np.maximum(pc - rp, -1.0 / eps)
        hi = np.minimum(pc + rp, 1.0 / eps)
        if np.any(hi <= lo):
            continue
        span = float((hi - lo).max())
        osc = 8 * np.abs(d).max() * span
        res = 8 * span / (w.scale / np.linalg.norm(th, 2))
        cut = 48 * span * eps
        n = int(max(min_points, osc, res, cut))
        n += (n + 1) % 2

        def integrand(P, xi=x[i], d=d):
            q = xi + np.einsum("ab,...b->...a", th, P)
            return np.exp(2j * np.pi * (P @ d)) * cutoff(eps * P) * w(q)

        coarse = _trapezoid_2d(integrand, lo, hi, n)
        fine = _trapezoid_2d(integrand, lo, hi, 2 * n - 1)
        out[i] = outer * fine
        err[i] = abs(fine - coarse)
    if np.any(err > tol * max(scale, 1e-300)):
        raise QuadratureError(f"quadrature error {err.max():.3e} above tolerance")
    out = out.reshape(shape)
    return (out, err.reshape(shape)) if with_error else out


# -- locally noncommutative kernels ----------------------------------------

def gamma(u):
    """Odd increasing map (-1, 1) -> R, cubic near 0 and exp(1/(1-u)) for u > 1/2."""
    u = np.asarray(u, dtype=float)
    a = np.abs(u)
    if np.any(a > CLAMP):
        raise GammaOverflow("point too close to the boundary of K")
    inner = E2 * a + 4 * E2 * a ** 3
    with np.errstate(over="ignore"):
        outer = np.exp(1.0 / (1.0 - np.where(a > 0.5, a, 0.0)))
    v = np.where(a <= 0.5, inner, outer)
    if not np.all(np.isfinite(v)):
        raise GammaOverflow("gamma overflows at this point")
    return np.sign(u) * v


def gamma_prime(u):
    u = np.asarray(u, dtype=float)
    a = np.abs(u)
    if np.any(a > CLAMP):
        raise GammaOverflow("point too close to the boundary of K")
    inner = E2 + 12 * E2 * a ** 2
    s = np.where(a > 0.5, a, 0.0)
    with np.errstate(over="ignore"):
        outer = np.exp(1.0 / (1.0 - s)) / (1.0 - s) ** 2
    v = np.where(a <= 0.5, inner, outer)
    if not np.all(np.isfinite(v)):
        raise GammaOverflow("gamma' overflows at this point")
    return v


def gamma_inverse(v):
    v = np.asarray(v, dtype=float)
    a = np.abs(v)
    # cubic branch: u^3 + u/4 - a/(4 e^2) = 0 has one real root (Cardano)
    q = a / (4 * E2)
    p = 0.25
    disc = np.sqrt(q * q / 4 + p ** 3 / 27)
    cub = np.cbrt(q / 2 + disc) + np.cbrt(q / 2 - disc)
    with np.errstate(divide="ignore", invalid="ignore"):
        ex = 1.0 - 1.0 / np.log(np.where(a > E2, a, np.e ** 3))
    return np.sign(v) * np.where(a <= E2, cub, ex)


def _in_box(u):
    return np.all(np.abs(np.asarray(u, float)) < 1.0, axis=-1)


@dataclass(frozen=True)
class _ConjugatedSymbol:
    """phi = w o gamma^-1, with the Fourier transform taken through the substitution v = gamma(u)."""
    base: object
    quad_points: int = 96

    def __call__(self, v):
        v = np.asarray(v, float)
        return self.base(gamma_inverse(v))

    def _nodes(self):
        c, r = self.base.support
        half = r / np.sqrt(2.0)
        z, wz = np.polynomial.legendre.leggauss(self.quad_points)
        u1 = c[0] + half * z
        u2 = c[1] + half * z
        U = np.stack(np.meshgrid(u1, u2, indexing="ij"), axis=-1)
        Wq = np.outer(wz, wz) * half * half
        jac = gamma_prime(U).prod(axis=-1)
        return gamma(U), self.base(U) * jac * Wq

    def fourier(self, k):
        G, vals = self._nodes()
        k = np.asarray(k, float)
        ph = np.exp(-2j * np.pi * np.einsum("...c,ijc->...ij", k, G))
        return (ph * vals).sum(axis=(-2, -1))

    @property
    def support(self):
        c, r = self.base.support
        half = r / np.sqrt(2.0)
        lo = gamma(c - half)
        hi = gamma(c + half)
        return 0.5 * (lo + hi), 0.5 * float(np.linalg.norm(hi - lo))

    @property
    def scale(self):
        return self.base.scale * E2

    def integral(self):
        return float(abs(self.fourier(np.zeros(2))))


def local_nc_kernel(spec: StarProductSpec, x, y, eps=None, tol=1e-9):
    """Locally noncommutative kernel; eps=None gives the limit kernel.

    k(x, y) = gamma'(y1) gamma'(y2) km(gamma(x), gamma(y)) for x, y in K and 0 otherwise,
    with km the Moyal kernel of phi = w o gamma^-1.
    """
    if spec.variant != "local-nc":
        raise ValueError("spec is not local-nc")
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    x, y = np.broadcast_arrays(x, y)
    inside = _in_box(x) & _in_box(y)
    out = np.zeros(x.shape[:-1], complex)
    if not inside.any():
        return out
    xi, yi = x[inside], y[inside]
    gx, gy = gamma(xi), gamma(yi)
    jac = gamma_prime(yi).prod(axis=-1)
    phi = _ConjugatedSymbol(spec.symbol)
    if eps is None:
        km = moyal_limit_kernel(spec, gx, gy, symbol=phi)
    else:
        km = moyal_eps_kernel(spec, eps, gx, gy, symbol=phi, tol=tol)
    out[inside] = jac * km
    return out


def star_kernel(spec: StarProductSpec, x, y, eps=None, tol=1e-9):
    if spec.variant == "moyal":
        if eps is None:
            return moyal_limit_kernel(spec, x, y)
        return moyal_eps_kernel(spec, eps, x, y, tol=tol)
    return local_nc_kernel(spec, x, y, eps, tol)


def apply_kernel(spec, x, f, eps=None, f_center=(0.0, 0.0), f_radius=0.5, n=24, tol=1e-9):
    """(W f)(x) for a smooth f supported in the square |y - f_center| < f_radius.

    Gauss-Legendre in y; x has shape (m, 2).
    """
    z, wz = np.polynomial.legendre.leggauss(n)
    c = np.asarray(f_center, float)
    Y = np.stack(np.meshgrid(c[0] + f_radius * z, c[1] + f_radius * z, indexing="ij"), -1).reshape(-1, 2)
    wy = (np.outer(wz, wz) * f_radius ** 2).ravel()
    fy = f(Y)
    x = np.atleast_2d(np.asarray(x, float))
    out = np.zeros(len(x), complex)
    for i, xi in enumerate(x):
        k = star_kernel(spec, np.broadcast_to(xi, Y.shape), Y, eps, tol)
        out[i] = (k * fy * wy).sum()
    return out


def build_spec(params: dict) -> StarProductSpec:
    variant = params.get("type", params.get("variant", "moyal"))
    sym = params.get("symbol", {})
    kind = sym.get("kind", "gaussian" if variant == "moyal" else "bump")
    if kind == "gaussian":
        symbol = GaussianSymbol(tuple(sym.get("center", (0.0, 0.0))), float(sym.get("width", 0.5)))
    elif kind == "bump":
        symbol = BumpSymbol(tuple(sym.get("center", (0.0, 0.0))), float(sym.get("radius", 0.3)))
    else:
        raise ValueError(f"unknown symbol kind {kind!r}")
    return StarProductSpec(float(params.get("theta0", 1.0)), symbol, variant)


def lattice_kernel(grid, box, params: dict):
    """Sample a cutoff star kernel on the lattice box.

    Box nodes are mapped affinely onto the open square (-1, 1)^2 (box edges to
    the boundary); the sampled values carry the Jacobian of that map and are
    rescaled to operator norm params['norm'] when given.
    """
    from .kernels import KernelOperator

    spec = build_spec(params)
    eps = params.get("eps")
    if eps is None:
        raise ValueError("lattice star kernels need a cutoff eps (the limit kernels are not compact)")
    (r0, r1), (c0, c1) = box
    ut = np.linspace(-1.0, 1.0, r1 - r0 + 1)
    ux = np.linspace(-1.0, 1.0, c1 - c0 + 1)
    U = np.stack(np.meshgrid(ut, ux, indexing="ij"), -1).reshape(-1, 2)
    if spec.variant == "moyal":
        U = U * float(params.get("extent", 1.0))
    n = len(U)
    X = np.repeat(U, n, axis=0)
    Y = np.tile(U, (n, 1))
    safe = np.all(np.abs(U) <= 1 - 1e-9, axis=-1) if spec.variant == "local-nc" else np.ones(n, bool)
    vals = np.zeros(n * n, complex)
    ok = np.repeat(safe, n) & np.tile(safe, n)
    vals[ok] = star_kernel(spec, X[ok], Y[ok], float(eps), float(params.get("quad_tol", 1e-9)))
    jac = (2.0 / ((r1 - r0) * grid.h)) * (2.0 / ((c1 - c0) * grid.h))
    m = vals.reshape(n, n) * jac
    if grid.n_components != 1:
        m = np.kron(m, np.eye(grid.n_components))
    W = KernelOperator(grid, box, matrix=m, name=spec.variant)
    if "norm" in params:
        nrm = W.operator_norm()
        if nrm > 0:
            W = W.scaled(float(params["norm"]) / nrm)
    return W
