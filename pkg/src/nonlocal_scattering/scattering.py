"""Moller and scattering operators, and the forms they preserve."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .green import propagator, slice_representation
from .hyperbolic import GAMMA0, DiracOperator, conjugation
from .lattice import inner_product, l2_norm
from .perturbed import PerturbedSystem

STRIP_GAP = 4      # rows between a Moller strip and the slice
STRIP_WIDTH = 2


class StripError(ValueError):
    pass


class SymmetryError(ValueError):
    pass


@dataclass
class SolutionRep:
    """A solution field together with a generator g (R_lam g = field) and the rows carrying g."""
    field: np.ndarray
    generator: np.ndarray
    strip: tuple
    lam: float = 0.0


@dataclass
class FormValue:
    kind: str
    value: complex
    detail: dict = field(default_factory=dict)


# -- strips -------------------------------------------------------------------

def past_strip(sys: PerturbedSystem):
    a, _ = sys.tau_rows
    s = (a - STRIP_GAP - STRIP_WIDTH, a - STRIP_GAP)
    if s[0] < 2:
        raise StripError("no room for a past strip below the slice")
    return s


def future_strip(sys: PerturbedSystem):
    _, b = sys.tau_rows
    s = (b + STRIP_GAP, b + STRIP_GAP + STRIP_WIDTH)
    if s[1] > sys.grid.nt - 3:
        raise StripError("no room for a future strip above the slice")
    return s


def strip_for(sys, side):
    return past_strip(sys) if side == "-" else future_strip(sys)


def rep_free(sys, g, strip):
    """Free solution generated by g."""
    return SolutionRep(propagator(sys.op, g), np.asarray(g, complex), tuple(strip), 0.0)


def rep_perturbed(sys, g, strip, lam=None):
    lam = sys.lam if lam is None else lam
    return SolutionRep(sys.propagator(g, lam), np.asarray(g, complex), tuple(strip), lam)


def represent(sys, f, side, check=True):
    """Generator in the past ('-') or future ('+') strip reproducing f beyond the slice."""
    strip = strip_for(sys, side)
    g = slice_representation(sys.op, f, strip)
    return g, strip


# -- Moller and scattering ---------------------------------------------------------

def far_rows(sys, side, buffer=2):
    a, b = sys.tau_rows
    nt = sys.grid.nt
    return (buffer, a) if side == "-" else (b, nt - 1 - buffer)


def moller(sys: PerturbedSystem, side, rep: SolutionRep, check=True):
    """Omega_{lam,side}: the free solution that agrees with rep.field beyond the slice on `side`."""
    g, strip = represent(sys, rep.field, side)
    out = SolutionRep(propagator(sys.op, g), g, strip, 0.0)
    if check:
        lo, hi = far_rows(sys, side)
        d = out.field[lo:hi + 1] - rep.field[lo:hi + 1]
        scale = max(np.abs(rep.field).max(), 1e-300)
        out_gap = float(np.abs(d).max() / scale)
        if out_gap > 1e-9:
            raise StripError(f"Moller image disagrees with the solution beyond the slice ({out_gap:.2e})")
    return out


def moller_inverse(sys, side, free: SolutionRep, lam=None):
    """Omega_{lam,side}^-1: the perturbed solution with the same far-side asymptotics."""
    g, strip = represent(sys, free.field, side)
    return rep_perturbed(sys, g, strip, lam)


def scattering_evolution(sys: PerturbedSystem, f0, lam=None, inverse=False):
    """S f0 = Omega_+ Omega_-^-1 f0 (or its inverse with the strips swapped)."""
    lam = sys.lam if lam is None else lam
    first, last = ("+", "-") if inverse else ("-", "+")
    g_in, _ = represent(sys, f0, first)
    f_lam = sys.propagator(g_in, lam)
    g_out, _ = represent(sys, f_lam, last)
    return propagator(sys.op, g_out)


def scattering_formula(sys: PerturbedSystem, f0, lam=None):
    """S f0 = f0 + lam R W N^+ (f0 restricted to M)."""
    lam = sys.lam if lam is None else lam
    if lam == 0:
        return np.array(f0, dtype=complex)
    n = sys.neumann_apply("+", sys.on_M(f0), lam)
    return f0 + lam * propagator(sys.op, sys.W.apply(n))


def scattering_derivative(sys: PerturbedSystem, f0, fractions=(4, 8, 16)):
    """R W f0 and the difference quotients (S_lam f0 - f0)/lam at lam = lambda0/k."""
    g = sys.grid
    deriv = propagator(sys.op, sys.W.apply(f0))
    lam0 = sys.lambda0
    rows = []
    for k in fractions:
        lam = lam0 / k
        q = (scattering_formula(sys, f0, lam) - f0) / lam
        rows.append({"lambda": lam, "error": l2_norm(g, q - deriv)})
    errs = [r["error"] for r in rows]
    ratios = [errs[i] / errs[i + 1] if errs[i + 1] > 0 else np.inf for i in range(len(errs) - 1)]
    return deriv, {"quotients": rows, "halving_ratios": ratios,
                   "derivative_norm": l2_norm(g, deriv)}


# -- forms -----------------------------------------------------------------------

def _require_symmetric(sys, lam):
    if np.iscomplexobj(lam) and np.imag(lam) != 0:
        raise SymmetryError("forms need a real coupling")
    if isinstance(sys.op, DiracOperator):
        raise SymmetryError("rho and sigma need a formally self-adjoint D; use form_delta for Dirac")
    if not sys.W.is_hermitian():
        raise SymmetryError("rho and sigma need W = W*")


def form_rho(sys: PerturbedSystem, a: SolutionRep, b: SolutionRep, alt_bump=None, check=True):
    """rho_lam(a, b) = <g_a, R_lam g_b> = <g_a, b.field>.

    With check=True the value is recomputed with the alternative generator
    g_a + D_lam h for a compact h, which generates the same solution.
    """
    lam = b.lam
    _require_symmetric(sys, lam)
    g = sys.grid
    val = complex(inner_product(g, a.generator, b.field))
    detail = {}
    if check:
        if alt_bump is None:
            alt_bump = _alt_bump(sys, a)
        alt = a.generator + sys.apply_D_lam(alt_bump, lam)
        val2 = complex(inner_product(g, alt, b.field))
        scale = max(l2_norm(g, a.generator) * l2_norm(g, b.field), 1e-300)
        detail["well_defined_gap"] = abs(val2 - val) / scale
        if detail["well_defined_gap"] > 1e-9:
            raise SymmetryError(f"rho depends on the generator ({detail['well_defined_gap']:.2e})")
    return FormValue("rho", val, detail)


def _alt_bump(sys, rep):
    """Compact bump next to the generator, away from the temporal boundary."""
    grid = sys.grid
    rows = np.nonzero(np.abs(rep.generator).max(axis=(-2, -1)))[0]
    cols = np.nonzero(np.abs(rep.generator).max(axis=(0, -1)))[0]
    r = int(rows.mean()) if len(rows) else grid.nt // 2
    c = int(cols.mean()) if len(cols) else grid.nx // 2
    n = np.arange(grid.nt)[:, None]
    j = np.arange(grid.nx)[None, :]
    r2 = ((n - r) / 3.0) ** 2 + ((j - c) / 4.0) ** 2
    prof = np.where(r2 < 1, (1 - r2) ** 3, 0.0)
    return prof[:, :, None] * np.ones(grid.n_components)


def form_sigma(sys: PerturbedSystem, a: SolutionRep, b: SolutionRep):
    """sigma_lam(a, b) for C-real generators: the real number rho_lam(a, b)."""
    for rep in (a, b):
        if np.abs(np.imag(rep.generator)).max() > 0:
            raise SymmetryError("sigma needs C-real generators")
    if not sys.W.is_real():
        raise SymmetryError("sigma needs a real kernel")
    rho = form_rho(sys, a, b, check=False)
    scale = max(l2_norm(sys.grid, a.generator) * l2_norm(sys.grid, b.field), 1e-300)
    imag = abs(rho.value.imag) / scale
    if imag > 1e-12:
        raise SymmetryError(f"sigma has an imaginary part {imag:.2e}")
    return FormValue("sigma", rho.value.real, {"imag_residue": imag})


def _require_dirac(sys, lam):
    if not isinstance(sys.op, DiracOperator):
        raise SymmetryError("delta needs a Dirac system")
    if np.iscomplexobj(lam) and np.imag(lam) != 0:
        raise SymmetryError("delta needs a real coupling")
    if not sys.op.gamma0_V_hermitian():
        raise SymmetryError("gamma0 V must be Hermitian")
    if not sys.W.is_gamma0_hermitian():
        raise SymmetryError("gamma0 W must be Hermitian")


def gamma0_apply(f):
    return np.einsum("ab,...b->...a", GAMMA0, f)


def form_delta(sys: PerturbedSystem, a: SolutionRep, b: SolutionRep):
    """delta_lam(a, b) = i <g_a, gamma^0 R_lam g_b>."""
    _require_dirac(sys, b.lam)
    val = 1j * complex(inner_product(sys.grid, a.generator, gamma0_apply(b.field)))
    return FormValue("delta", val)


def admissible_charge_row(sys, row):
    """Two-level slice rows (row, row+1) lie wholly before or after the kernel rows."""
    (r0, r1), _ = sys.W.box
    return row + 1 < r0 or row > r1


def conserved_charge(sys: PerturbedSystem, a: SolutionRep, b: SolutionRep, row):
    _require_dirac(sys, b.lam)
    if not admissible_charge_row(sys, row):
        raise StripError(f"row {row} meets the kernel rows")
    if not (1 <= row <= sys.grid.nt - 3):
        raise StripError("slice too close to the grid edge")
    return complex(sys.op.charge_form(a.field, b.field, row))


def klein_gordon_pairing(grid, u1, u2, row):
    """Slice integral of conj(u1) du2/dt - conj(du1/dt) u2 on row, with forward difference quotients."""
    h = grid.h
    a0, b0 = u1[row], u2[row]
    da = (u1[row + 1] - a0) / h
    db = (u2[row + 1] - b0) / h
    return complex(h * (np.conj(a0) * db - np.conj(da) * b0).sum())


def c_commutation_gap(sys: PerturbedSystem, direction, f, lam=None):
    """|| C R_lam (C f) - R_lam f || / || R_lam f ||."""
    lam = sys.lam if lam is None else lam
    u = sys.glue_global(direction, f, lam)
    v = conjugation(sys.glue_global(direction, conjugation(f), lam))
    return l2_norm(sys.grid, u - v) / max(l2_norm(sys.grid, u), 1e-300)


def scatter_report(sys: PerturbedSystem, f0, tol=1e-8):
    """Formula vs evolution for one free solution, as a JSON-ready dict."""
    g = sys.grid
    lam = sys.lam
    s_form = scattering_formula(sys, f0)
    s_evol = scattering_evolution(sys, f0)
    back = scattering_evolution(sys, s_evol, inverse=True)
    n0 = max(l2_norm(g, f0), 1e-300)
    res = {
        "formula_vs_evolution": l2_norm(g, s_form - s_evol) / n0,
        "inverse_roundtrip": l2_norm(g, back - f0) / n0,
        "free_residual": l2_norm(g, sys.op.apply(s_form)) / n0 * g.weight,
        "change": l2_norm(g, s_form - f0) / n0,
    }
    ok = res["formula_vs_evolution"] < tol and res["inverse_roundtrip"] < tol
    forms = {}
    g_in, _ = represent(sys, f0, "-")
    try:
        if isinstance(sys.op, DiracOperator):
            forms["delta_unitarity"] = delta_unitarity_gap(sys, g_in, g_in)
        else:
            _require_symmetric(sys, lam)
            forms["rho_preservation"] = rho_preservation_gap(sys, g_in, g_in)
        ok = ok and all(v < tol for v in forms.values())
    except SymmetryError as e:
        forms["skipped"] = str(e)
    return {"lambda": lam, "norms": {**sys.norm_values(), "lambda0": sys.lambda0},
            "residuals": res, "forms": forms, "pass": bool(ok)}


# -- preservation checks (relative to the Cauchy-Schwarz scale ||g_a|| ||f_b||) --------

def _rel(sys, x, y, ga, fb):
    return abs(x - y) / max(l2_norm(sys.grid, ga) * l2_norm(sys.grid, fb), 1e-300)


def rho_preservation_gap(sys: PerturbedSystem, ga, gb):
    """|rho_0(S a, S b) - rho_0(a, b)| for the free solutions a = R ga, b = R gb."""
    fa, fb = propagator(sys.op, ga), propagator(sys.op, gb)
    sa, sb = scattering_formula(sys, fa), scattering_formula(sys, fb)
    ha, _ = represent(sys, sa, "+")
    before = complex(inner_product(sys.grid, ga, fb))
    after = complex(inner_product(sys.grid, ha, sb))
    return _rel(sys, before, after, ga, fb)


def sigma_moller_gaps(sys: PerturbedSystem, ga, gb):
    """sigma_lam(A, B) against sigma_0(Omega A, Omega B) for both Moller operators."""
    a = rep_perturbed(sys, np.real(ga), (0, 0))
    b = rep_perturbed(sys, np.real(gb), (0, 0))
    s = form_sigma(sys, a, b).value
    out = {}
    free = sys.with_lambda(0.0)
    for side in "+-":
        oa, ob = moller(sys, side, a), moller(sys, side, b)
        out[side] = _rel(sys, s, form_sigma(free, oa, ob).value, a.generator, b.field)
    return out


def delta_unitarity_gap(sys: PerturbedSystem, ga, gb):
    """|delta_0(S a, S b) - delta_0(a, b)| for Dirac free solutions."""
    free = sys.with_lambda(0.0)
    a, b = rep_free(sys, ga, (0, 0)), rep_free(sys, gb, (0, 0))
    sa, sb = scattering_formula(sys, a.field), scattering_formula(sys, b.field)
    ha, strip = represent(sys, sa, "+")
    before = form_delta(free, a, b).value
    after = form_delta(free, SolutionRep(sa, ha, strip), SolutionRep(sb, gb, strip)).value
    return _rel(sys, before, after, ga, b.field)
