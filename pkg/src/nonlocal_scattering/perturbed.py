"""Perturbed operators D + lam W: Neumann series, slice and global fundamental solutions."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .green import GreenOperator, advanced, retarded, slice_representation, solve_cauchy
from .hyperbolic import StencilOperator
from .kernels import KernelOperator
from .lattice import Region, check_margin, inner_product, l2_norm, time_ramp

DENSE_CAP = 33 * 65


class CouplingTooLarge(ValueError):
    pass


class ResidualFailure(RuntimeError):
    pass


class NormNotConverged(RuntimeError):
    pass


class DenseTooLarge(ValueError):
    pass


@dataclass
class NormEstimate:
    value: float
    increment: float
    iterations: int
    converged: bool

    def __float__(self):
        return self.value


def estimate_norm(apply, adjoint, shape, weight=1.0, max_iter=100, rtol=1e-6, rng=None, strict=False):
    """Operator norm by power iteration on A*A.

    `apply` and `adjoint` map arrays of `shape` to arrays of `shape`; the inner
    product is the plain sum times `weight`. Returns the estimate with the
    last relative increment as an error bar.
    """
    rng = np.random.default_rng(0 if rng is None else rng)
    x = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    x /= np.sqrt(weight * np.vdot(x, x).real)
    prev = None
    inc = np.inf
    for it in range(1, max_iter + 1):
        y = apply(x)
        val = np.sqrt(weight * np.vdot(y, y).real)
        if val == 0.0:
            return NormEstimate(0.0, 0.0, it, True)
        z = adjoint(y)
        nz = np.sqrt(weight * np.vdot(z, z).real)
        if nz == 0.0:
            return NormEstimate(0.0, 0.0, it, True)
        x = z / nz
        if prev is not None:
            inc = abs(val - prev) / val
            if inc < rtol:
                return NormEstimate(float(val), float(inc), it, True)
        prev = val
    if strict:
        raise NormNotConverged(f"power iteration did not settle (last increment {inc:.2e})")
    return NormEstimate(float(val), float(inc), max_iter, False)


@dataclass
class SeriesResult:
    value: np.ndarray
    term_norms: list
    residual: float

    @property
    def ratios(self):
        t = np.asarray(self.term_norms)
        return t[1:] / np.where(t[:-1] == 0, np.inf, t[:-1])


class PerturbedSystem:
    """D + lam W on a grid whose slice rows (a, b) contain the kernel box strictly.

    M is rows a+1..b-1. R_tau^+ / R_tau^- are the windowed Green operators on M.
    """

    def __init__(self, op: StencilOperator, W: KernelOperator, lam=0.0, safety=0.9,
                 series_tol=1e-14, residual_tol=1e-10, norms=None, norm_seed=0):
        if W.grid.shape != op.grid.shape or W.grid.h != op.grid.h:
            raise ValueError("kernel and operator live on different grids")
        self.op = op
        self.grid = op.grid
        self.W = W
        self.lam = complex(lam) if np.iscomplexobj(lam) else float(lam)
        self.safety = float(safety)
        self.series_tol = float(series_tol)
        self.residual_tol = float(residual_tol)
        a, b = self.grid.tau_rows
        (r0, r1), _ = W.box
        if not (a < r0 and r1 < b):
            raise ValueError("kernel box not strictly inside the slice")
        self.tau_rows = (a, b)
        self.window = (a + 1, b - 1)
        # all R applications below feed K-supported sources or only read K
        check_margin(W.region(), self.window)
        self.R_plus = GreenOperator(op, "+", self.window, check=False)
        self.R_minus = GreenOperator(op, "-", self.window, check=False)
        self._Ra = {"+": self.R_plus.adjoint(), "-": self.R_minus.adjoint()}
        self._Wa = W.adjoint()
        mask = np.zeros(self.grid.nt, bool)
        mask[self.window[0]:self.window[1] + 1] = True
        self.m_rows = mask
        self._norms = None if norms is None else dict(norms)
        self.norm_seed = norm_seed
        self._dense_cache = {}

    # -- basic maps on M ---------------------------------------------------
    def on_M(self, f):
        f = np.array(f, dtype=complex)
        f[..., ~self.m_rows, :, :] = 0
        return f

    def M_region(self):
        m = np.zeros((self.grid.nt, self.grid.nx), bool)
        m[self.m_rows] = True
        return Region(self.grid, m)

    def green(self, direction):
        return self.R_plus if direction == "+" else self.R_minus

    def RW(self, direction, f):
        return self.green(direction).apply(self.W.apply(f))

    def WR(self, direction, f):
        return self.W.apply(self.green(direction).apply(self.on_M(f)))

    def _RW_adj(self, direction, f):
        return self._Wa.apply(self._Ra[direction].apply(self.on_M(f)))

    def _WR_adj(self, direction, f):
        return self.on_M(self._Ra[direction].apply(self._Wa.apply(f)))

    def apply_D_lam(self, u, lam=None):
        lam = self.lam if lam is None else lam
        return self.op.apply(u) + lam * self.W.apply(u)

    def with_lambda(self, lam):
        s = PerturbedSystem(self.op, self.W, lam, self.safety, self.series_tol, self.residual_tol,
                            self._norms, self.norm_seed)
        return s

    # -- norms ---------------------------------------------------------------
    @property
    def norms(self):
        if self._norms is None:
            shape = self.grid.shape
            w = self.grid.weight
            est = {}
            for d in ("+", "-"):
                est[f"R{d}W"] = estimate_norm(lambda f, d=d: self.on_M(self.RW(d, f)),
                                              lambda f, d=d: self.on_M(self._RW_adj(d, f)),
                                              shape, w, rng=self.norm_seed)
                est[f"WR{d}"] = estimate_norm(lambda f, d=d: self.WR(d, f),
                                              lambda f, d=d: self._WR_adj(d, f),
                                              shape, w, rng=self.norm_seed)
            self._norms = est
        return self._norms

    def norm_values(self):
        return {k: float(v) for k, v in self.norms.items()}

    @property
    def lambda0(self):
        vals = [float(v) for v in self.norms.values()]
        if max(vals) == 0.0:
            return np.inf
        return self.safety * min(1.0 / v for v in vals if v > 0)

    def require_small(self, lam=None):
        lam = self.lam if lam is None else lam
        if abs(lam) >= self.lambda0:
            raise CouplingTooLarge(f"|lambda| = {abs(lam):.6g} >= lambda0 = {self.lambda0:.6g}")

    # -- Neumann series -------------------------------------------------------
    def neumann(self, variant, f, lam=None, check_coupling=True, max_terms=2000):
        """N^+/- f = sum (-lam R W)^k f, or with variant '~+'/'~-' the series in W R."""
        lam = self.lam if lam is None else lam
        if check_coupling:
            self.require_small(lam)
        tilde = variant.startswith("~")
        d = variant[-1]
        step = (lambda u: self.WR(d, u)) if tilde else (lambda u: self.on_M(self.RW(d, u)))
        f = self.on_M(f)
        g = self.grid
        acc = f.copy()
        term = f
        norms = [l2_norm(g, f) if f.ndim == 3 else float(np.sqrt(np.abs(inner_product(g, f, f)).max()))]
        for _ in range(max_terms):
            if lam == 0:
                break
            term = -lam * step(term)
            tn = float(np.sqrt(np.abs(inner_product(g, term, term)).max()))
            acc = acc + term
            norms.append(tn)
            an = float(np.sqrt(np.abs(inner_product(g, acc, acc)).max()))
            if tn <= self.series_tol * an or tn == 0.0:
                break
        else:
            raise ResidualFailure("Neumann series did not terminate")
        res = acc + lam * step(acc) - f
        fn = float(np.sqrt(np.abs(inner_product(g, f, f)).max()))
        rn = float(np.sqrt(np.abs(inner_product(g, res, res)).max()))
        rel = rn / fn if fn > 0 else rn
        if rel > self.residual_tol:
            raise ResidualFailure(f"Neumann residual {rel:.3e} above {self.residual_tol:.1e}")
        return SeriesResult(acc, norms, rel)

    def neumann_apply(self, variant, f, lam=None, check_coupling=True):
        return self.neumann(variant, f, lam, check_coupling).value

    # -- slice fundamental solutions ----------------------------------------
    def equation_rows(self, direction):
        a, b = self.tau_rows
        return (a + 1, b - 2) if direction == "+" else (a + 2, b - 1)

    def green_slice(self, direction, f, lam=None, check_coupling=True, report=False):
        """R_{tau,lam}^+/- f via N R f, cross-checked against R N~ f and the D_lam residual."""
        lam = self.lam if lam is None else lam
        R = GreenOperator(self.op, direction, self.window)
        f = self.on_M(f)
        Rf = R.apply(f)
        left = self.neumann_apply(direction, Rf, lam, check_coupling)
        Nt = self.neumann_apply("~" + direction, f, lam, check_coupling)
        right = R.apply(Nt) if np.any(Nt) else np.zeros_like(f)
        g = self.grid
        scale = max(l2_norm(g, left), 1e-300)
        gap = l2_norm(g, left - right) / scale if left.ndim == 3 else 0.0
        if gap > 1e-9:
            raise ResidualFailure(f"N R f and R N~ f differ by {gap:.3e}")
        lo, hi = self.equation_rows(direction)
        r = self.apply_D_lam(left, lam) - f
        r[..., :lo, :, :] = 0
        r[..., hi + 1:, :, :] = 0
        fn = max(l2_norm(g, f), 1e-300) if f.ndim == 3 else 1.0
        res = l2_norm(g, r) / fn if r.ndim == 3 else 0.0
        if res > 1e-9:
            raise ResidualFailure(f"D_lam R_lam f residual {res:.3e}")
        if report:
            return left, {"factorization_gap": gap, "residual": res}
        return left

    # -- global fundamental solutions ---------------------------------------
    def resolvent_global(self, direction, h, lam=None, check_coupling=True):
        """R^+/- h - lam R^+/- W N^+/-(R^+/- h on M): the Neumann-resolvent route."""
        lam = self.lam if lam is None else lam
        F = retarded(self.op, h) if direction == "+" else advanced(self.op, h)
        if lam == 0:
            return F
        x = self.neumann_apply(direction, self.on_M(F), lam, check_coupling)
        src = self.W.apply(x)
        corr = retarded(self.op, src) if direction == "+" else advanced(self.op, src)
        return F - lam * corr

    def _gluing_profiles(self, eps_steps, profile):
        a, b = self.tau_rows
        g = self.grid
        if profile == "smoothstep":
            ramp = time_ramp
        elif profile == "linear":
            def ramp(grid, lo, hi):
                n = np.arange(grid.nt, dtype=float)
                return np.clip((n - lo) / max(hi - lo, 1), 0.0, 1.0)
        else:
            raise ValueError(f"unknown partition profile {profile!r}")
        lo = ramp(g, a, a + eps_steps - 1)
        hi = ramp(g, b - eps_steps + 1, b)
        return 1.0 - lo, lo - hi, hi, ramp

    def _check_gluing_room(self, eps_steps):
        a, b = self.tau_rows
        (r0, r1), _ = self.W.box
        need = eps_steps + 2
        if r0 < a + need or r1 > b - need:
            raise ValueError(f"kernel rows {r0}..{r1} need {need} rows of room inside the slice {a}..{b}")
        if b - a < 2 * need + 1:
            raise ValueError("slice too thin for the gluing strips")

    def _glue_inside(self, direction, h, lam, check_coupling):
        """Source supported in M: slice solution plus free continuation beyond the slice."""
        a, b = self.tau_rows
        op = self.op
        u = self.green_slice(direction, h, lam, check_coupling)
        u = np.array(u)
        if direction == "+":
            # one more step with the source row b-1, then the free solution from rows b-1, b
            op.march_forward(u, h, b - 1, b)
            cont = solve_cauchy(op, op.cauchy_data(u, b - 1), '+')
            u[..., b + 1:, :, :] = cont[..., b + 1:, :, :]
        else:
            op.march_backward(u, h, a + 1, a)
            cont = solve_cauchy(op, op.cauchy_data(u, a), '-')
            u[..., :a, :, :] = cont[..., :a, :, :]
        return u

    def glue_global(self, direction, h, lam=None, eps_steps=4, profile="smoothstep",
                    check_coupling=True, report=False):
        """Global R_lam^+/- h assembled from the time partition of h."""
        lam = self.lam if lam is None else lam
        if check_coupling:
            self.require_small(lam)
        self._check_gluing_room(eps_steps)
        op, g = self.op, self.grid
        a, b = self.tau_rows
        h = np.asarray(h, dtype=complex)
        chi_m, chi_0, chi_p, ramp = self._gluing_profiles(eps_steps, profile)
        parts = {k: c[:, None, None] * h for k, c in (("-", chi_m), ("0", chi_0), ("+", chi_p))}
        out = np.zeros_like(h)
        diag = {}
        if np.any(parts["0"]):
            out += self._glue_inside(direction, parts["0"], lam, check_coupling)
        same, other = ("+", "-") if direction == "+" else ("-", "+")
        if np.any(parts[same]):
            # beyond the slice in the propagation direction: the free solution never meets K
            F = retarded(op, parts[same]) if direction == "+" else advanced(op, parts[same])
            out += F
        if np.any(parts[other]):
            F = retarded(op, parts[other]) if direction == "+" else advanced(op, parts[other])
            if direction == "+":
                s0 = a + eps_steps
                strip, chi = (s0, s0 + 2), ramp(g, s0, s0 + 2)
            else:
                s1 = b - eps_steps
                strip, chi = (s1 - 2, s1), 1.0 - ramp(g, s1 - 2, s1)
            gen = -slice_representation(op, F, strip, profile=chi)
            inner = self._glue_inside(direction, gen, lam, check_coupling)
            blend = (1.0 - chi)[:, None, None] * F
            # overlap consistency: before reaching K the slice solution is chi F
            rows = slice(0, strip[1] + 1) if direction == "+" else slice(strip[0], g.nt)
            ov = inner[..., rows, :, :] - (chi[:, None, None] * F)[..., rows, :, :]
            diag["overlap"] = float(np.abs(ov).max() / max(np.abs(F).max(), 1e-300))
            out += blend + inner
        if report:
            return out, diag
        return out

    def propagator(self, g, lam=None, **kw):
        """R_lam = R_lam^- - R_lam^+."""
        return self.glue_global("-", g, lam, **kw) - self.glue_global("+", g, lam, **kw)

    # -- dense oracles ---------------------------------------------------------
    def _index_sets(self, direction):
        g = self.grid
        nt, nx, N = g.shape
        flat = np.arange(nt * nx * N).reshape(g.shape)
        lo, hi = self.equation_rows(direction)
        eq = flat[lo:hi + 1].ravel()
        unk = flat[lo + 1:hi + 2].ravel() if direction == "+" else flat[lo - 1:hi].ravel()
        M = flat[self.window[0]:self.window[1] + 1].ravel()
        return eq, unk, M

    def _dense_size_check(self):
        a, b = self.window
        n = (b - a + 1) * self.grid.nx
        if n > DENSE_CAP:
            raise DenseTooLarge(f"{n} nodes on M exceed the dense cap")
        return n

    def dense_RW(self, direction):
        """Dense matrix of R_tau W on M (rows and columns indexed by M nodes)."""
        self._dense_size_check()
        if direction in self._dense_cache:
            return self._dense_cache[direction]
        g = self.grid
        S = self.op.sparse().tocsr()
        eq, unk, M = self._index_sets(direction)
        lu = spla.splu(sp.csc_matrix(S[eq][:, unk]))
        PK = self.W.selector()
        # W as a full matrix restricted to eq rows / M columns
        Wm = g.weight * self.W.to_dense()
        src = PK.T.tocsr()[eq]                       # eq x K
        cols = lu.solve(np.ascontiguousarray(src.toarray().astype(complex)))  # unk x K
        pos = {v: i for i, v in enumerate(M)}
        rows_in_M = np.array([pos[v] for v in unk])
        RK = np.zeros((len(M), PK.shape[0]), complex)
        RK[rows_in_M] = cols
        KM = (PK.tocsr()[:, M]).toarray()            # K x M selector
        self._dense_cache[direction] = RK @ (Wm @ KM)
        return self._dense_cache[direction]

    def dense_neumann(self, direction, f, lam=None):
        lam = self.lam if lam is None else lam
        A = self.dense_RW(direction)
        _, _, M = self._index_sets(direction)
        b = np.asarray(f).ravel()[M]
        # A only has K columns, so (1 + lam A) x = b closes on the K entries of x
        k = np.nonzero(np.any(A != 0, axis=0))[0]
        xk = np.linalg.solve(np.eye(len(k)) + lam * A[np.ix_(k, k)], b[k])
        x = b - lam * A[:, k] @ xk
        out = np.zeros(self.grid.shape, complex).ravel()
        out[M] = x
        return out.reshape(self.grid.shape)

    def dense_green_slice(self, direction, f, lam=None):
        """R_{tau,lam} f by a direct sparse solve of the D + lam W block system."""
        lam = self.lam if lam is None else lam
        g = self.grid
        S = self.op.sparse().tocsr()
        PK = self.W.selector()
        Wfull = (PK.T @ sp.csr_matrix(g.weight * self.W.to_dense()) @ PK).tocsr()
        A = (S + lam * Wfull).tocsr()
        eq, unk, _ = self._index_sets(direction)
        sol = spla.spsolve(sp.csc_matrix(A[eq][:, unk]), np.asarray(f).ravel()[eq])
        out = np.zeros(g.shape, complex).ravel()
        out[unk] = sol
        return out.reshape(g.shape)


def no_compact_solution_check(sys: PerturbedSystem, box=None, lam=None):
    """Smallest singular value of D_lam on fields supported in a box (dense, small boxes)."""
    lam = sys.lam if lam is None else lam
    g = sys.grid
    if box is None:
        box = sys.W.box
    (r0, r1), (c0, c1) = box
    n = (r1 - r0 + 1) * (c1 - c0 + 1) * g.n_components
    if n > DENSE_CAP:
        raise DenseTooLarge("box too large for the dense check")
    tmp = KernelOperator(g, box, pairs=[])
    basis = tmp.scatter(np.eye(n))
    cols = sys.apply_D_lam(basis, lam).reshape(n, -1).T
    s = np.linalg.svd(cols * np.sqrt(g.weight), compute_uv=False)
    return {"sigma_min": float(s[-1]), "sigma_max": float(s[0]),
            "relative": float(s[-1] / s[0]) if s[0] > 0 else 0.0, "unknowns": n,
            "lambda": lam}
