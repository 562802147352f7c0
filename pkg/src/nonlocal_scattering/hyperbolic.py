"""Discrete hyperbolic operators.

Every operator is a finite stencil: (Du)[n, j] = sum over terms (ds, dx) of
C[n, j] @ u[n + ds, j + dx]. The same term list drives stencil application,
the exact transpose (adjoint), sparse assembly and the causal time steppers,
so the steppers invert precisely the operator that apply_D evaluates.
"""
from __future__ import annotations

import logging

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .lattice import CauchyData, GridMismatch, GridSpec, Region, empirical_support

log = logging.getLogger(__name__)

SIGMA1 = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA2 = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA3 = np.array([[1, 0], [0, -1]], dtype=complex)
GAMMA0 = SIGMA2
GAMMA1 = 1j * SIGMA1


def shift(u, ds, dx, periodic=False):
    """out[..., n, j, :] = u[..., n + ds, j + dx, :], zero outside the grid in time."""
    out = np.zeros_like(u)
    nt = u.shape[-3]
    if abs(ds) >= nt:
        return out
    src = u[..., max(ds, 0):nt + min(ds, 0), :, :]
    dst = (Ellipsis, slice(max(-ds, 0), nt + min(-ds, 0)), slice(None), slice(None))
    out[dst] = _shift_x(src, dx, periodic)
    return out


def _shift_x(a, dx, periodic):
    # a[..., j, :] -> a[..., j + dx, :]
    if dx == 0:
        return a
    if periodic:
        return np.roll(a, -dx, axis=-2)
    out = np.zeros_like(a)
    nx = a.shape[-2]
    if dx > 0:
        out[..., :nx - dx, :] = a[..., dx:, :]
    else:
        out[..., -dx:, :] = a[..., :nx + dx, :]
    return out


def _shift_coeff_impl(C, ds, dx, periodic):
    nt = C.shape[0]
    out = np.zeros_like(C)
    if abs(ds) < nt:
        src = C[max(ds, 0):nt + min(ds, 0)]
        if dx:
            if periodic:
                src = np.roll(src, -dx, axis=1)
            else:
                tmp = np.zeros_like(src)
                nx = C.shape[1]
                if dx > 0:
                    tmp[:, :nx - dx] = src[:, dx:]
                else:
                    tmp[:, -dx:] = src[:, :nx + dx]
                src = tmp
        out[max(-ds, 0):nt + min(-ds, 0)] = src
    return out


class SingularPivot(RuntimeError):
    pass


class StencilOperator:
    """Linear stencil operator on complex N-vector lattice fields."""

    eta = 1e-10  # unit CFL schemes are characteristic-exact

    def __init__(self, grid: GridSpec, terms: dict, periodic=False, row_mask=None, name="stencil"):
        self.grid = grid
        self.N = grid.n_components
        self.periodic = periodic
        self.name = name
        self.terms = {}
        for key, C in terms.items():
            C = np.asarray(C, dtype=complex)
            if C.shape != (grid.nt, grid.nx, self.N, self.N):
                raise ValueError(f"coefficient {key} has shape {C.shape}")
            if not np.all(np.isfinite(C)):
                raise ValueError("non-finite stencil coefficient")
            self.terms[tuple(key)] = C
        if row_mask is None:
            row_mask = np.ones(grid.nt, bool)
        self.row_mask = np.asarray(row_mask, bool)
        self._pivots = {}

    # -- application ------------------------------------------------------
    def _check(self, u):
        u = np.asarray(u)
        if u.shape[-3:] != self.grid.shape:
            raise GridMismatch(f"field shape {u.shape[-3:]} does not match {self.grid.shape}")
        return u.astype(complex, copy=False)

    def apply(self, u):
        u = self._check(u)
        out = np.zeros_like(u)
        for (ds, dx), C in self.terms.items():
            out += np.einsum("njab,...njb->...nja", C, shift(u, ds, dx, self.periodic))
        out[..., ~self.row_mask, :, :] = 0
        return out

    __call__ = apply

    def boundary_rows(self):
        """Rows where the stencil is undefined and zero-filled."""
        return np.nonzero(~self.row_mask)[0]

    def adjoint(self):
        """Exact conjugate transpose of the stencil matrix, again as a stencil."""
        terms = {}
        for (ds, dx), C in self.terms.items():
            Cm = C * self.row_mask[:, None, None, None]
            Cs = _shift_coeff_impl(Cm, -ds, -dx, self.periodic)
            key = (-ds, -dx)
            Ch = np.conj(np.swapaxes(Cs, -1, -2))
            terms[key] = terms[key] + Ch if key in terms else Ch
        return StencilOperator(self.grid, terms, self.periodic, None, name=self.name + "*")

    def sparse(self):
        g = self.grid
        nt, nx, N = g.shape
        rows, cols, vals = [], [], []
        n_idx, j_idx = np.meshgrid(np.arange(nt), np.arange(nx), indexing="ij")
        for (ds, dx), C in self.terms.items():
            tn = n_idx + ds
            tj = j_idx + dx
            if self.periodic:
                tj = tj % nx
            ok = (tn >= 0) & (tn < nt) & (tj >= 0) & (tj < nx) & self.row_mask[:, None]
            for a in range(N):
                for b in range(N):
                    v = C[..., a, b]
                    sel = ok & (v != 0)
                    rows.append(((n_idx[sel] * nx + j_idx[sel]) * N + a))
                    cols.append(((tn[sel] * nx + tj[sel]) * N + b))
                    vals.append(v[sel])
        size = nt * nx * N
        m = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(size, size))
        return m.tocsr()

    # -- causal inversion --------------------------------------------------
    def _row_terms(self, n, u, ds_set, rhs):
        for (ds, dx), C in self.terms.items():
            if ds in ds_set and 0 <= n + ds < self.grid.nt:
                v = _shift_x(u[..., n + ds, :, :], dx, self.periodic)
                rhs = rhs - np.einsum("jab,...jb->...ja", C[n], v)
        return rhs

    def _pivot(self, n, ds):
        key = (n, ds)
        if key in self._pivots:
            return self._pivots[key]
        parts = {dx: C[n] for (s, dx), C in self.terms.items() if s == ds}
        nx, N = self.grid.nx, self.N
        if set(parts) <= {0}:
            block = parts.get(0, np.zeros((nx, N, N), complex))
            if np.any(np.abs(np.linalg.det(block)) < 1e-300):
                raise SingularPivot(f"row {n} cannot be solved for")
            piv = ("point", np.linalg.inv(block))
        else:
            rows, cols, vals = [], [], []
            j = np.arange(nx)
            for dx, B in parts.items():
                tj = j + dx
                if self.periodic:
                    tj = tj % nx
                ok = (tj >= 0) & (tj < nx)
                for a in range(N):
                    for b in range(N):
                        rows.append(j[ok] * N + a)
                        cols.append(tj[ok] * N + b)
                        vals.append(B[ok, a, b])
            M = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(nx * N, nx * N))
            try:
                piv = ("lu", spla.splu(M))
            except RuntimeError as exc:
                raise SingularPivot(f"row {n} cannot be solved for") from exc
        self._pivots[key] = piv
        return piv

    def _solve_pivot(self, n, ds, rhs):
        kind, P = self._pivot(n, ds)
        if kind == "point":
            return np.einsum("jab,...jb->...ja", P, rhs)
        nx, N = self.grid.nx, self.N
        flat = rhs.reshape(-1, nx * N).T
        sol = P.solve(np.ascontiguousarray(flat))
        return sol.T.reshape(rhs.shape)

    def march_forward(self, u, f, n_from, n_to):
        """Fill rows n_from+1..n_to from rows n_from-1, n_from using equation rows n_from..n_to-1."""
        for n in range(n_from, n_to):
            rhs = self._row_terms(n, u, (0, -1), f[..., n, :, :])
            u[..., n + 1, :, :] = self._solve_pivot(n, 1, rhs)
        return u

    def march_backward(self, u, f, n_from, n_to):
        """Fill rows n_from-1..n_to from rows n_from, n_from+1 using equation rows n_from..n_to+1."""
        for n in range(n_from, n_to, -1):
            rhs = self._row_terms(n, u, (0, 1), f[..., n, :, :])
            u[..., n - 1, :, :] = self._solve_pivot(n, -1, rhs)
        return u

    def retarded(self, f, m0=1, m1=None):
        """Forward inversion with zero rows m0-1, m0; output in rows m0+1..m1."""
        f = self._check(f)
        m1 = self.grid.nt - 1 if m1 is None else m1
        u = np.zeros_like(f)
        return self.march_forward(u, f, m0, m1)

    def advanced(self, f, m0=0, m1=None):
        """Backward inversion with zero rows m1, m1+1; output in rows m0..m1-1."""
        f = self._check(f)
        m1 = self.grid.nt - 2 if m1 is None else m1
        u = np.zeros_like(f)
        return self.march_backward(u, f, m1, m0)

    def evolve_rows(self, row, v0, v1):
        """Homogeneous solution on the whole grid with given values on rows row, row+1."""
        g = self.grid
        u = g.zeros(np.shape(v0)[:-2])
        u[..., row, :, :] = v0
        u[..., row + 1, :, :] = v1
        f = np.zeros_like(u)
        self.march_forward(u, f, row + 1, g.nt - 1)
        self.march_backward(u, f, row, 0)
        return u

    # Cauchy data conventions, overridden per family
    def cauchy_rows(self, data: CauchyData):
        raise NotImplementedError

    def cauchy_data(self, f, row) -> CauchyData:
        raise NotImplementedError


def _as_coeff(grid, value):
    """Constant, (nt, nx) scalar field, or (nt, nx, N, N) matrix field -> matrix field."""
    N = grid.n_components
    v = np.asarray(value, dtype=complex)
    if v.ndim == 0:
        return np.broadcast_to(v * np.eye(N), (grid.nt, grid.nx, N, N)).copy()
    if v.shape == (grid.nt, grid.nx):
        return v[..., None, None] * np.eye(N)
    if v.shape == (N, N):
        return np.broadcast_to(v, (grid.nt, grid.nx, N, N)).copy()
    if v.shape == (grid.nt, grid.nx, N, N):
        return v.copy()
    raise ValueError(f"cannot interpret coefficient of shape {v.shape}")


class WaveOperator(StencilOperator):
    """Leapfrog form of box + U^0 d_t + U^1 d_x + V at unit CFL.

    (Du)^n_j = (u^{n+1}_j + u^{n-1}_j - u^n_{j+1} - u^n_{j-1}) / h^2
               + U0 (u^{n+1}_j - u^{n-1}_j) / 2h + U1 (u^n_{j+1} - u^n_{j-1}) / 2h + V u^n_j
    The -2u^n_j of the two second differences cancel exactly at dt = dx.
    """

    def __init__(self, grid, U0=0.0, U1=0.0, V=0.0, name="wave"):
        h = grid.h
        I = np.eye(grid.n_components)
        self.U0 = _as_coeff(grid, U0)
        self.U1 = _as_coeff(grid, U1)
        self.V = _as_coeff(grid, V)
        terms = {
            (1, 0): I / h**2 + self.U0 / (2 * h),
            (-1, 0): I / h**2 - self.U0 / (2 * h),
            (0, 1): -I / h**2 + self.U1 / (2 * h),
            (0, -1): -I / h**2 - self.U1 / (2 * h),
            (0, 0): self.V,
        }
        terms = {k: np.broadcast_to(v, (grid.nt, grid.nx) + I.shape) for k, v in terms.items()}
        mask = np.ones(grid.nt, bool)
        mask[[0, -1]] = False
        super().__init__(grid, terms, periodic=False, row_mask=mask, name=name)

    @property
    def is_free(self):
        return not (self.U0.any() or self.U1.any() or self.V.any())

    def cauchy_rows(self, data):
        u1 = np.zeros_like(data.u0) if data.u1 is None else data.u1
        return data.u0, data.u0 + self.grid.h * u1

    def cauchy_data(self, f, row):
        f = np.asarray(f)
        return CauchyData(row, f[..., row, :, :].copy(),
                          (f[..., row + 1, :, :] - f[..., row, :, :]) / self.grid.h)


class DiracOperator(StencilOperator):
    """-i gamma^mu d_mu + V with gamma^0 = sigma_2, gamma^1 = i sigma_1, C = complex conjugation.

    Free propagation is the one-step characteristic update
        psi^n = U_n psi^{n-1},  U_n = E_n T,  E_n = exp(-i h gamma^0 V(t_n)),
    with T moving the upper component one cell right and the lower one cell left.
    The operator is the gamma^0-symmetric two-level form of that update,
        D psi^n = i gamma^0 (U_n psi^{n-1} - U_{n+1}^* psi^{n+1}) / 2h,
    whose null space contains every one-step solution. gamma^0 D is Hermitian
    as a matrix whenever gamma^0 V is, which makes the Green and charge
    identities exact on the lattice. x-shifts wrap around; the margin checks
    keep every support away from the edge, so the wrap is never exercised.
    """

    def __init__(self, grid, V=0.0, name="dirac"):
        if grid.n_components != 2:
            raise ValueError("Dirac operator needs N = 2")
        check_gamma_relations()
        self.V = _as_coeff(grid, V)
        h = grid.h
        G0V = np.einsum("ab,njbc->njac", GAMMA0, self.V)
        self.E = scipy.linalg.expm(-1j * h * G0V)
        Eh = np.conj(np.swapaxes(self.E, -1, -2))
        Pp = np.diag([1.0, 0.0]).astype(complex)
        Pm = np.diag([0.0, 1.0]).astype(complex)
        c = 1j / (2 * h)
        E_next_r = _shift_coeff_impl(Eh, 1, 1, True)   # E^*[n+1, j+1]
        E_next_l = _shift_coeff_impl(Eh, 1, -1, True)  # E^*[n+1, j-1]
        terms = {
            (-1, -1): c * np.einsum("ab,njbc,cd->njad", GAMMA0, self.E, Pp),
            (-1, 1): c * np.einsum("ab,njbc,cd->njad", GAMMA0, self.E, Pm),
            (1, 1): -c * np.einsum("ab,bc,njcd->njad", GAMMA0, Pp, E_next_r),
            (1, -1): -c * np.einsum("ab,bc,njcd->njad", GAMMA0, Pm, E_next_l),
        }
        mask = np.ones(grid.nt, bool)
        mask[[0, -1]] = False
        super().__init__(grid, terms, periodic=True, row_mask=mask, name=name)
        self._Pp, self._Pm = Pp, Pm

    def transport(self, psi):
        return (np.einsum("ab,...jb->...ja", self._Pp, np.roll(psi, 1, axis=-2))
                + np.einsum("ab,...jb->...ja", self._Pm, np.roll(psi, -1, axis=-2)))

    def one_step(self, n, psi_prev):
        """U_n psi^{n-1}."""
        return np.einsum("jab,...jb->...ja", self.E[n], self.transport(psi_prev))

    def gamma0_V_hermitian(self, tol=1e-12):
        G0V = np.einsum("ab,njbc->njac", GAMMA0, self.V)
        return np.abs(G0V - np.conj(np.swapaxes(G0V, -1, -2))).max() <= tol

    def cauchy_rows(self, data):
        u1 = self.one_step(data.row + 1, data.u0) if data.u1 is None else data.u1
        return data.u0, u1

    def cauchy_data(self, f, row):
        f = np.asarray(f)
        return CauchyData(row, f[..., row, :, :].copy(), f[..., row + 1, :, :].copy())

    def charge_form(self, a, b, row):
        """Two-level slice pairing (h/2) sum [(U a^n)^* b^{n+1} + (a^{n+1})^* U b^n], U = U_{n+1}.

        Reduces to h sum a^n* b^n on one-step solutions; conserved for
        gamma^0-symmetric perturbations away from their support.
        """
        h = self.grid.h
        a0, a1 = a[..., row, :, :], a[..., row + 1, :, :]
        b0, b1 = b[..., row, :, :], b[..., row + 1, :, :]
        Ua = self.one_step(row + 1, a0)
        Ub = self.one_step(row + 1, b0)
        s = (np.conj(Ua) * b1).sum(axis=(-2, -1)) + (np.conj(a1) * Ub).sum(axis=(-2, -1))
        return 0.5 * h * s


def check_gamma_relations(tol=1e-14):
    I = np.eye(2)
    g0, g1 = GAMMA0, GAMMA1
    checks = {
        "g0^2 = 1": np.allclose(g0 @ g0, I, atol=tol),
        "g0 hermitian": np.allclose(g0, g0.conj().T, atol=tol),
        "g1^2 = -1": np.allclose(g1 @ g1, -I, atol=tol),
        "g1 anti-hermitian": np.allclose(g1, -g1.conj().T, atol=tol),
        "anticommute": np.allclose(g0 @ g1 + g1 @ g0, 0, atol=tol),
        # C = complex conjugation: C g C = conj(g) must equal -g
        "C g0 C = -g0": np.allclose(np.conj(g0), -g0, atol=tol),
        "C g1 C = -g1": np.allclose(np.conj(g1), -g1, atol=tol),
    }
    bad = [k for k, ok in checks.items() if not ok]
    if bad:
        raise AssertionError(f"gamma relations violated: {bad}")
    return checks


def conjugation(f):
    """Charge conjugation C in the Majorana representation."""
    return np.conj(f)


def locality_check(op: StencilOperator, f, eta=None):
    """supp(Df) within supp(f) dilated by one stencil width."""
    eta = op.eta if eta is None else eta
    g = op.grid
    sf = empirical_support(g, f, eta)
    if sf.is_empty():
        return empirical_support(g, op.apply(f), eta).is_empty()
    sd = empirical_support(g, op.apply(f), eta)
    return sd <= sf.dilate(1, periodic=op.periodic)


def interior_rows(grid, width=2):
    m = np.zeros(grid.nt, bool)
    m[width:grid.nt - width] = True
    return m


# -- presets ---------------------------------------------------------------

def potential_field(grid, preset: dict):
    """Scalar potential sampled from a named preset."""
    kind = preset.get("preset", "free")
    T, X = grid.mesh()
    if kind == "free":
        return np.zeros_like(T)
    if kind == "mass":
        m = float(preset.get("m", 1.0))
        return np.full_like(T, m * m if preset.get("kind", "wave") == "wave" else m)
    if kind == "gaussian-potential":
        amp = float(preset.get("amp", 1.0))
        ct, cx = preset.get("center", [0.0, 0.0])
        w = float(preset.get("width", 0.5))
        return amp * np.exp(-((T - ct) ** 2 + (X - cx) ** 2) / (2 * w * w))
    raise ValueError(f"unknown operator preset {kind!r}")


def build_operator(grid, spec: dict):
    kind = spec.get("kind", "wave")
    V = potential_field(grid, {**spec, "kind": kind})
    if kind == "wave":
        return WaveOperator(grid.with_components(1) if grid.n_components != 1 else grid, V=V,
                            name=f"wave/{spec.get('preset', 'free')}")
    if kind == "dirac":
        return DiracOperator(grid.with_components(2) if grid.n_components != 2 else grid, V=V,
                             name=f"dirac/{spec.get('preset', 'free')}")
    raise ValueError(f"unknown operator kind {kind!r}")
