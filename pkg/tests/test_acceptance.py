"""The twelve acceptance criteria, one test each, at their stated tolerances and time budgets.

Each test prints a single PASS/FAIL line with the measured figure. Run the file
directly (python3 tests/test_acceptance.py) for the summary without pytest.
"""
import time

import numpy as np
import pytest

from nonlocal_scattering import experiments as ex
from nonlocal_scattering import scattering as sc
from nonlocal_scattering import star
from nonlocal_scattering.green import advanced, propagator, retarded
from nonlocal_scattering.hyperbolic import DiracOperator, WaveOperator, potential_field
from nonlocal_scattering.kernels import bump_kernel
from nonlocal_scattering.lattice import GridSpec, causal_cone, empirical_support, inner_product, l2_norm
from nonlocal_scattering.perturbed import PerturbedSystem

ETA = 1e-10


def _report(number, title, ok, elapsed, budget, detail):
    ok = bool(ok) and elapsed < budget
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}  [{elapsed:.1f} s / {budget:.0f} s]"
    return ok, line


def _emit(capsys, line):
    if capsys is None:
        print(line)
        return
    with capsys.disabled():
        print("\n" + line)


def _bump(grid, center, radii, vec):
    n = np.arange(grid.nt)[:, None]
    j = np.arange(grid.nx)[None, :]
    r2 = ((n - center[0]) / radii[0]) ** 2 + ((j - center[1]) / radii[1]) ** 2
    prof = np.where(r2 < 1, (1 - r2) ** 3, 0.0)
    return prof[:, :, None] * np.asarray(vec)[None, None, :]


def _random_bump(grid, rng, rows, cols):
    N = grid.n_components
    c = (rng.uniform(*rows), rng.uniform(*cols))
    r = (rng.uniform(2, 4), rng.uniform(2, 5))
    return _bump(grid, c, r, rng.normal(size=N) + 1j * rng.normal(size=N))


def _glue_system(kind, seed):
    N = 1 if kind == "wave" else 2
    g = GridSpec.from_counts(41, 129, n_components=N, tau_rows=(6, 34))
    op = WaveOperator(g) if kind == "wave" else DiracOperator(g)
    sym = "hermitian" if kind == "wave" else "gamma0"
    W = bump_kernel(g, ((14, 24), (56, 72)), rng=seed, symmetry=sym, real=True)
    S = PerturbedSystem(op, W)
    return S.with_lambda(S.lambda0 / 2)


def _dense_system(kind, seed):
    """Slice rows 1..33 of a 35x65 grid: the 33x65 dense cap."""
    N = 1 if kind == "wave" else 2
    g = GridSpec.from_counts(35, 65, n_components=N, tau_rows=(0, 34))
    op = WaveOperator(g) if kind == "wave" else DiracOperator(g)
    sym = "hermitian" if kind == "wave" else "gamma0"
    W = bump_kernel(g, ((12, 22), (24, 40)), rng=seed, symmetry=sym, real=True)
    S = PerturbedSystem(op, W)
    return S.with_lambda(S.lambda0 / 2)


# -- criteria -----------------------------------------------------------------------

def criterion_1():
    t0 = time.perf_counter()
    worst = 0.0
    rng = np.random.default_rng(1)
    ops = []
    for kind in ("wave", "dirac"):
        N = 1 if kind == "wave" else 2
        g = GridSpec.from_counts(33, 97, n_components=N, tau_rows=(4, 28))
        V = potential_field(g, {"preset": "gaussian-potential", "amp": 2.0, "kind": kind})
        cls = WaveOperator if kind == "wave" else DiracOperator
        ops += [cls(g), cls(g, V=V)]
    count = 0
    for i in range(50):
        op = ops[i % len(ops)]
        g = op.grid
        f = _random_bump(g, rng, (6, 26), (36, 60))
        nf = l2_norm(g, f)
        for G in (retarded, advanced):
            worst = max(worst, l2_norm(g, op.apply(G(op, f)) - f) / nf,
                        l2_norm(g, G(op, op.apply(f)) - f) / nf)
        count += 1
    el = time.perf_counter() - t0
    return _report(1, "Green exactness", worst < 1e-12, el, 5,
                   f"max relative residual {worst:.2e} over {count} inputs (< 1e-12)")


def criterion_2():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    leaks = []
    systems = [_glue_system("wave", 1), _glue_system("dirac", 1)]
    for i in range(20):
        S = systems[i % 2]
        g = S.grid
        f = _random_bump(g, rng, (8, 32), (44, 84))
        supp = empirical_support(g, f, 0.0)
        for d in "+-":
            free = retarded(S.op, f) if d == "+" else advanced(S.op, f)
            out = ~causal_cone(supp, d).mask
            leaks.append(np.abs(free).max(axis=-1)[out].max(initial=0.0) / np.abs(free).max())
            pert = S.glue_global(d, f)
            out = ~causal_cone(supp | S.W.region(), d).mask
            leaks.append(np.abs(pert).max(axis=-1)[out].max(initial=0.0) / np.abs(pert).max())
    el = time.perf_counter() - t0
    worst = max(leaks)
    return _report(2, "Causality", worst <= ETA, el, 10,
                   f"max relative mass outside the cones {worst:.2e} (<= {ETA:.0e})")


def criterion_3():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    gaps, spreads, radius_spreads = [], [], []
    for seed in range(10):
        kind = "wave" if seed % 2 == 0 else "dirac"
        S = _dense_system(kind, seed)
        g = S.grid
        f = _random_bump(g, rng, (14, 20), (29, 35))
        for d in "+-":
            res = S.neumann(d, f)
            ref = S.dense_neumann(d, f)
            gaps.append(l2_norm(g, res.value - ref) / l2_norm(g, ref))
            r = res.ratios
            r = r[np.isfinite(r) & (r > 0)]
            ratio = float(np.median(r[2:-1])) if len(r) > 3 else float(r[-1])
            bound = abs(S.lam) * S.norm_values()[f"R{d}W"]
            spreads.append(abs(ratio - bound) / bound)
            # diagnostic: the spectral radius, read off the K block of the dense matrix
            A = S.dense_RW(d)
            k = np.nonzero(np.any(A != 0, axis=0))[0]
            rho = abs(S.lam) * np.abs(np.linalg.eigvals(A[np.ix_(k, k)])).max()
            radius_spreads.append(abs(ratio - rho) / rho)
    el = time.perf_counter() - t0
    ok = max(gaps) < 1e-9 and max(spreads) <= 0.1
    return _report(3, "Neumann correctness", ok, el, 30,
                   f"series vs dense {max(gaps):.2e} (< 1e-9); convergence ratio vs |lam| ||RW|| "
                   f"off by {min(spreads):.0%}..{max(spreads):.0%} (<= 10%); "
                   f"vs |lam| spectral radius off by <= {max(radius_spreads):.0%}")


def criterion_4():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    worst = 0.0
    for kind in ("wave", "dirac"):
        S = _dense_system(kind, 0)
        for _ in range(5):
            f = _random_bump(S.grid, rng, (14, 20), (29, 35))
            for d in "+-":
                _, info = S.green_slice(d, f, report=True)
                worst = max(worst, info["factorization_gap"])
    el = time.perf_counter() - t0
    return _report(4, "Left/right factorization", worst < 1e-9, el, 10,
                   f"max ||N R f - R N~ f|| / ||N R f|| {worst:.2e} (< 1e-9)")


def criterion_5():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    worst, used = 0.0, 0
    for kind in ("wave", "dirac"):
        S = _glue_system(kind, 2)
        g = S.grid
        K = S.W.region()
        tries = 0
        while used < 10 * (1 + (kind == "dirac")) and tries < 400:
            tries += 1
            d = "+-"[tries % 2]
            f = _random_bump(g, rng, (8, 32), (46, 82))
            if (causal_cone(empirical_support(g, f, 0.0), d) & K).nodes().size:
                continue
            used += 1
            free = retarded(S.op, f) if d == "+" else advanced(S.op, f)
            gap = np.abs(S.glue_global(d, f) - free).max() / np.abs(free).max()
            worst = max(worst, gap)
    el = time.perf_counter() - t0
    return _report(5, "Unperturbed agreement", worst < 1e-12 and used > 0, el, 5,
                   f"max gap {worst:.2e} over {used} inputs whose cones miss K (< 1e-12)")


def criterion_6():
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    worst = 0.0
    for kind in ("wave", "dirac"):
        S = _glue_system(kind, 3)
        g = S.grid
        # Dirac symmetry is with respect to the gamma^0 pairing
        J = sc.gamma0_apply if kind == "dirac" else (lambda x: x)
        for _ in range(3):
            f = _random_bump(g, rng, (8, 32), (48, 80))
            h = _random_bump(g, rng, (8, 32), (48, 80))
            for d, o in (("+", "-"), ("-", "+")):
                lhs = inner_product(g, J(h), S.glue_global(d, f))
                rhs = inner_product(g, J(S.glue_global(o, h)), f)
                worst = max(worst, abs(lhs - rhs) / (l2_norm(g, f) * l2_norm(g, h)))
    el = time.perf_counter() - t0
    return _report(6, "Adjoint symmetry", worst < 1e-10, el, 5,
                   f"max |<g,R f> - <R' g,f>| / ||f|| ||g|| {worst:.2e} (< 1e-10)")


def criterion_7():
    t0 = time.perf_counter()
    worst, n = 0.0, 0
    for kind in ("wave", "dirac"):
        S = ex.standard_system(kind, real=True)
        rng = np.random.default_rng(7)
        for _ in range(5):
            f0 = propagator(S.op, ex.incoming_generator(S, rng))
            for frac in (0.25, 0.5):
                lam = frac * S.lambda0
                a = sc.scattering_formula(S, f0, lam)
                b = sc.scattering_evolution(S, f0, lam)
                worst = max(worst, l2_norm(S.grid, a - b) / l2_norm(S.grid, f0))
            n += 1
    el = time.perf_counter() - t0
    return _report(7, "Scattering cross-oracle", worst < 1e-8, el, 60,
                   f"max ||S_formula - S_evolution|| / ||f0|| {worst:.2e} over {n} solutions x 2 couplings (< 1e-8)")


def criterion_8():
    t0 = time.perf_counter()
    ratios = []
    for kind in ("wave", "dirac"):
        S = ex.standard_system(kind, real=True)
        for seed in range(2):
            f0 = propagator(S.op, ex.incoming_generator(S, np.random.default_rng(seed)))
            _, rep = sc.scattering_derivative(S, f0, fractions=(4, 8, 16))
            ratios += rep["halving_ratios"]
    el = time.perf_counter() - t0
    ok = all(1.7 <= r <= 2.3 for r in ratios)
    return _report(8, "Derivative law", ok, el, 30,
                   f"halving ratios {min(ratios):.3f}..{max(ratios):.3f} (in [1.7, 2.3])")


def criterion_9():
    t0 = time.perf_counter()
    worst = {"rho": 0.0, "sigma": 0.0, "delta": 0.0}
    W = ex.standard_system("wave", real=True)
    D = ex.standard_system("dirac", real=True)
    rng = np.random.default_rng(9)
    for _ in range(20):
        ga, gb = ex.incoming_generator(W, rng), ex.outgoing_generator(W, rng)
        worst["rho"] = max(worst["rho"], sc.rho_preservation_gap(W, ga, gb))
        gaps = sc.sigma_moller_gaps(W, ga.real, gb.real)
        worst["sigma"] = max(worst["sigma"], gaps["+"], gaps["-"])
        ga, gb = ex.incoming_generator(D, rng), ex.outgoing_generator(D, rng)
        worst["delta"] = max(worst["delta"], sc.delta_unitarity_gap(D, ga, gb))
    el = time.perf_counter() - t0
    ok = all(v < 1e-8 for v in worst.values())
    return _report(9, "Form preservation", ok, el, 60,
                   "rho {rho:.1e}, sigma {sigma:.1e}, delta {delta:.1e} over 20 pairs (< 1e-8)".format(**worst))


def criterion_10():
    t0 = time.perf_counter()
    reps = {"compact": ex.compact_solution_demo(), "nonunique": ex.nonunique_cauchy_demo(),
            "nosolution": ex.nosolution_cauchy_demo()}
    el = time.perf_counter() - t0
    status = ", ".join(f"{k} {'pass' if r['pass'] else 'fail'}"
                       + (f" ({r['status']})" if "status" in r else "") for k, r in reps.items())
    return _report(10, "Counterexample certificates", all(r["pass"] for r in reps.values()), el, 30, status)


def criterion_11():
    t0 = time.perf_counter()
    spec = star.StarProductSpec(1.0, star.GaussianSymbol((0.1, -0.1), 0.5))
    rng = np.random.default_rng(11)
    X = rng.uniform(-0.5, 0.5, size=(5, 2))
    Y = X + rng.uniform(-0.5, 0.5, size=(5, 2))
    lim = star.moyal_limit_kernel(spec, X, Y)
    approx = star.moyal_eps_kernel(spec, 0.05, X, Y)
    moyal_gap = float((np.abs(approx - lim) / np.abs(lim)).max())
    local = star.StarProductSpec(1.0, star.BumpSymbol((0.05, 0.0), 0.15), "local-nc")
    outside = np.array([[1.2, 0.0], [0.0, -1.0], [-1.5, 2.0], [0.3, 1.01]])
    inside = rng.uniform(-0.8, 0.8, size=(4, 2))
    out_vals = np.concatenate([star.local_nc_kernel(local, outside, inside),
                               star.local_nc_kernel(local, inside, outside),
                               star.local_nc_kernel(local, outside, inside, eps=0.1, tol=1e-7)])
    Z = rng.uniform(-0.9, 0.9, size=(8, 2))
    prof = star.local_nc_kernel(local, Z, Z) / star.gamma_prime(Z).prod(axis=-1)
    spread = float(np.abs(prof - prof[0]).max() / abs(prof[0]))
    el = time.perf_counter() - t0
    ok = moyal_gap < 1e-3 and np.all(out_vals == 0) and spread < 1e-6
    return _report(11, "Star kernels", ok, el, 60,
                   f"Moyal eps=0.05 gap {moyal_gap:.1e} (< 1e-3); local-nc outside K max "
                   f"{np.abs(out_vals).max():.1e}; k(x,x)/gamma'(x) spread {spread:.1e} (< 1e-6)")


def criterion_12():
    t0 = time.perf_counter()
    D = _glue_system("dirac", 12)
    rng = np.random.default_rng(12)
    (r0, r1), _ = D.W.box
    worst = 0.0
    for _ in range(20):
        a = sc.rep_perturbed(D, ex.incoming_generator(D, rng), (0, 0))
        b = sc.rep_perturbed(D, ex.outgoing_generator(D, rng), (0, 0))
        q0 = sc.conserved_charge(D, a, b, r0 - 3)
        q1 = sc.conserved_charge(D, a, b, r1 + 2)
        worst = max(worst, abs(q1 - q0) / max(abs(q0), 1e-300))
    el = time.perf_counter() - t0
    return _report(12, "Conserved Dirac charge", worst < 1e-8, el, 10,
                   f"max relative drift between slices {worst:.2e} over 20 pairs (< 1e-8)")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7, criterion_8, criterion_9, criterion_10, criterion_11, criterion_12]


def _evaluate(i, check):
    try:
        return check()
    except Exception as e:  # a crash is a failed criterion, reported on its line
        return False, f"criterion {i:2d} FAIL  raised {type(e).__name__}: {e}"


@pytest.mark.parametrize("i", range(1, 13), ids=[f"criterion_{i}" for i in range(1, 13)])
def test_acceptance(i, capsys):
    ok, line = _evaluate(i, CRITERIA[i - 1])
    _emit(capsys, line)
    assert ok, line


if __name__ == "__main__":
    results = [_evaluate(i, c) for i, c in enumerate(CRITERIA, 1)]
    for _, line in results:
        print(line)
    print(f"{sum(ok for ok, _ in results)}/{len(results)} criteria pass")
