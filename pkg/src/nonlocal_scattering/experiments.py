"""Runnable counterexamples and convergence studies, each returning a certificate dict."""
from __future__ import annotations

import json
import os

import numpy as np

from . import star
from .green import advanced, propagator, retarded, solve_cauchy
from .hyperbolic import DiracOperator, WaveOperator
from .kernels import KernelOperator, bump_kernel, rank_one_kernel
from .lattice import CauchyData, GridSpec, Region, inner_product, l2_norm, write_field_csv, write_region_csv
from .perturbed import PerturbedSystem, no_compact_solution_check

GRID_SCALES = {
    # nt, nx, slice rows, kernel rows, kernel half-width in columns
    "small": {"nt": 49, "nx": 193, "tau_rows": (12, 36), "k_rows": (18, 30), "k_half": 10},
    "medium": {"nt": 65, "nx": 257, "tau_rows": (16, 48), "k_rows": (22, 42), "k_half": 12},
}


class DegenerateConstruction(ValueError):
    pass


def bump(grid, center, radii, vec=None):
    """(1 - r^2)^3 bump on an ellipse of node radii around a node centre."""
    n = np.arange(grid.nt)[:, None]
    j = np.arange(grid.nx)[None, :]
    r2 = ((n - center[0]) / radii[0]) ** 2 + ((j - center[1]) / radii[1]) ** 2
    prof = np.where(r2 < 1, (1 - r2) ** 3, 0.0)
    if vec is None:
        vec = np.ones(grid.n_components)
    return prof[:, :, None] * np.asarray(vec)[None, None, :]


def random_bump(grid, rng, rows, cols, real=False):
    """Bump with random centre inside the row/column ranges and random component vector."""
    N = grid.n_components
    rr = max((rows[1] - rows[0]) / 2.0, 1.5)
    rc = max((cols[1] - cols[0]) / 2.0, 1.5)
    c = (0.5 * (rows[0] + rows[1]), 0.5 * (cols[0] + cols[1]))
    vec = rng.normal(size=N) + (0 if real else 1j * rng.normal(size=N))
    return bump(grid, c, (rr, rc), vec)


def incoming_generator(sys, rng, real=False, rows=None):
    """Random bump below the slice whose causal future crosses the kernel box."""
    a, _ = sys.tau_rows
    (r0, r1), (c0, c1) = sys.W.box
    dirac = sys.grid.n_components == 2
    if rows is None:
        rows = (r0 - 5, r0 - 2) if dirac else (max(a - 9, 2), a - 4)
    mid = 0.5 * (c0 + c1) + rng.uniform(-2, 2)
    if dirac:
        # massless Dirac packets ride the characteristics; aim one at the box centre
        mid += rng.choice([-1.0, 1.0]) * (0.5 * (r0 + r1) - 0.5 * (rows[0] + rows[1]))
    half = 0.25 * (c1 - c0) + rng.uniform(0, 2)
    return random_bump(sys.grid, rng, rows, (mid - half, mid + half), real=real)


def outgoing_generator(sys, rng, real=False, rows=None):
    """Random bump above the slice whose causal past crosses the kernel box."""
    _, b = sys.tau_rows
    (r0, r1), (c0, c1) = sys.W.box
    dirac = sys.grid.n_components == 2
    if rows is None:
        rows = (r1 + 2, r1 + 5) if dirac else (b + 4, min(b + 9, sys.grid.nt - 3))
    mid = 0.5 * (c0 + c1) + rng.uniform(-2, 2)
    if dirac:
        mid += rng.choice([-1.0, 1.0]) * (0.5 * (rows[0] + rows[1]) - 0.5 * (r0 + r1))
    half = 0.25 * (c1 - c0) + rng.uniform(0, 2)
    return random_bump(sys.grid, rng, rows, (mid - half, mid + half), real=real)


def standard_system(kind="wave", scale="small", seed=0, symmetry=None, real=False, lam_fraction=0.5,
                    kernel=None):
    """A wave or Dirac system with a random bump kernel in the middle of the slice."""
    p = GRID_SCALES[scale]
    N = 1 if kind == "wave" else 2
    grid = GridSpec.from_counts(p["nt"], p["nx"], n_components=N, tau_rows=p["tau_rows"])
    op = WaveOperator(grid) if kind == "wave" else DiracOperator(grid)
    mid = grid.nx // 2
    box = (p["k_rows"], (mid - p["k_half"], mid + p["k_half"]))
    if symmetry is None:
        symmetry = "hermitian" if kind == "wave" else "gamma0"
    if kernel is None:
        W = bump_kernel(grid, box, rng=seed, symmetry=symmetry, real=real)
    else:
        W = kernel(grid, box)
    sys = PerturbedSystem(op, W)
    return sys.with_lambda(lam_fraction * sys.lambda0)


def _write(out_dir, report, fields=None, regions=None, grid=None):
    if out_dir is None:
        return
    os.makedirs(out_dir, exist_ok=True)
    from .cli import dump_json
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        fh.write(dump_json(report))
    for name, f in (fields or {}).items():
        write_field_csv(os.path.join(out_dir, f"{name}.csv"), grid, f)
    for name, r in (regions or {}).items():
        write_region_csv(os.path.join(out_dir, f"{name}.csv"), r)


# -- compactly supported solutions ---------------------------------------------

def compact_solution_demo(config=None, out_dir=None):
    cfg = {"nt": 41, "nx": 129, "tau_rows": [4, 36], "w1": [[18, 62], [4, 6]], "w2": [[20, 66], [4, 6]],
           "tol": 1e-10, **(config or {})}
    grid = GridSpec.from_counts(cfg["nt"], cfg["nx"], tau_rows=tuple(cfg["tau_rows"]))
    op = WaveOperator(grid)
    w1 = bump(grid, *cfg["w1"])
    w2 = bump(grid, *cfg["w2"])
    Dw2 = op.apply(w2)
    overlap = complex(inner_product(grid, w1, w2))
    scale = l2_norm(grid, w1) * l2_norm(grid, w2)
    if abs(overlap) < 1e-12 * scale:
        raise DegenerateConstruction("<w1, w2> vanishes")
    box = Region(grid, (np.abs(w1[..., 0]) + np.abs(Dw2[..., 0])) > 0).bounding_box()
    W = rank_one_kernel(grid, box, w1, Dw2, name="compact-example")
    sys = PerturbedSystem(op, W)
    lam_star = -1.0 / overlap
    nw2 = l2_norm(grid, w2)
    res_star = l2_norm(grid, sys.apply_D_lam(w2, lam_star)) / nw2
    res_off = l2_norm(grid, sys.apply_D_lam(w2, 0.5 * lam_star)) / nw2
    lam0 = sys.lambda0
    svd_star = no_compact_solution_check(sys, box, lam_star)
    svd_small = no_compact_solution_check(sys, box, 0.5 * lam0)
    report = {
        "demo": "compact",
        "lambda_star": [lam_star.real, lam_star.imag],
        "abs_lambda_star": abs(lam_star),
        "lambda0": lam0,
        "lambda_star_exceeds_lambda0": bool(abs(lam_star) > lam0),
        "residual_at_lambda_star": res_star,
        "residual_off_lambda_star": res_off,
        "sigma_min_at_lambda_star": svd_star["relative"],
        "sigma_min_at_half_lambda0": svd_small["relative"],
        "tolerances": {"residual": cfg["tol"], "off_residual_min": 1e-3},
        "pass": bool(res_star < cfg["tol"] and res_off > 1e-3 and svd_small["relative"] > 1e-8),
    }
    _write(out_dir, report, {"w2": w2}, grid=grid)
    return report


# -- Cauchy problem with non-unique solution -------------------------------------

def nonunique_cauchy_demo(config=None, out_dir=None):
    """Zero Cauchy data but nonzero solution, with spacelike w1, w2 as in the construction.

    For spacelike supports f0[u] is -R w2 up to sign and vanishes on supp w1, so
    the coupling 1/<w1, f0[u]> does not exist; the certificate records this
    degeneracy and fails. A causal variant (w1 in the past of w2) is reported
    alongside for diagnosis.
    """
    cfg = {"nt": 41, "nx": 129, "tau_rows": [4, 36], "sigma_row": 24,
           "w1": [[16, 80], [3, 4]], "w2": [[16, 48], [3, 4]],
           "causal": {"w1": [[12, 64], [3, 4]], "w2": [[24, 64], [3, 4]], "sigma_row": 30},
           "tol_residual": 1e-9, "tol_data": 1e-10, "tol_degenerate": 1e-12, **(config or {})}
    grid = GridSpec.from_counts(cfg["nt"], cfg["nx"], tau_rows=tuple(cfg["tau_rows"]))
    op = WaveOperator(grid)
    main = _nonunique_case(grid, op, bump(grid, *cfg["w1"]), bump(grid, *cfg["w2"]), cfg["sigma_row"], cfg)
    c = cfg["causal"]
    causal = _nonunique_case(grid, op, bump(grid, *c["w1"]), bump(grid, *c["w2"]), c["sigma_row"], cfg)
    report = {"demo": "nonunique", **main, "causal_variant": causal,
              "tolerances": {"residual": cfg["tol_residual"], "data": cfg["tol_data"],
                             "degenerate": cfg["tol_degenerate"]},
              "pass": main["pass"]}
    _write(out_dir, report)
    return report


def _nonunique_case(grid, op, w1, w2, sigma_row, cfg):
    box = Region(grid, (np.abs(w1[..., 0]) + np.abs(w2[..., 0])) > 0).bounding_box()
    W = rank_one_kernel(grid, box, w1, w2, name="nonunique-example")
    rng = np.random.default_rng(0)
    probe = rng.normal(size=grid.shape) * W.region().mask[:, :, None]
    wrw = {d: l2_norm(grid, W.apply(G(op, W.apply(probe)))) / max(l2_norm(grid, W.apply(probe)), 1e-300)
           for d, G in (("+", retarded), ("-", advanced))}
    rp = retarded(op, w2)
    data = op.cauchy_data(rp, sigma_row)
    f0 = solve_cauchy(op, data)
    coef = complex(inner_product(grid, w1, f0))
    scale = l2_norm(grid, w1) * l2_norm(grid, f0)
    out = {"WRW_relative": {k: float(v) for k, v in wrw.items()},
           "coefficient": [coef.real, coef.imag], "coefficient_relative": abs(coef) / max(scale, 1e-300)}
    if abs(coef) <= cfg["tol_degenerate"] * scale:
        out.update({"status": "degenerate", "pass": False})
        return out
    lam = 1.0 / coef
    f_lam = f0 - rp
    n = l2_norm(grid, f_lam)
    r = op.apply(f_lam) + lam * W.apply(f_lam)
    d = op.cauchy_data(f_lam, sigma_row)
    data_norm = float(np.sqrt(grid.h * (np.abs(d.u0) ** 2).sum() + grid.h * (np.abs(d.u1) ** 2).sum()))
    res = l2_norm(grid, r) / n
    ok = res < cfg["tol_residual"] and data_norm < cfg["tol_data"] * n and n > 0
    out.update({"status": "constructed", "lambda": [lam.real, lam.imag], "residual": res,
                "cauchy_data_norm": data_norm, "solution_norm": n, "pass": bool(ok)})
    return out


# -- Cauchy problem with no solution -------------------------------------------------

def diamond(grid, row, col, radius):
    """Discrete double cone over the two-level slice (row, row+1) with base half-width radius."""
    n = np.arange(grid.nt)[:, None]
    j = np.arange(grid.nx)[None, :]
    depth = np.where(n >= row + 1, n - row - 1, row - n)
    return Region(grid, np.abs(j - col) <= radius - depth)


def nosolution_cauchy_demo(config=None, out_dir=None):
    cfg = {"nt": 41, "nx": 129, "tau_rows": [4, 36], "sigma_row": 20, "radius": 10,
           "o1_col": 52, "o2_col": 84, "w_radii": [3, 4], "u_radius": 4, "lambda_fraction": 0.5,
           "tol": 1e-8, **(config or {})}
    grid = GridSpec.from_counts(cfg["nt"], cfg["nx"], tau_rows=tuple(cfg["tau_rows"]))
    op = WaveOperator(grid)
    s = cfg["sigma_row"]
    O1 = diamond(grid, s, cfg["o1_col"], cfg["radius"])
    O2 = diamond(grid, s, cfg["o2_col"], cfg["radius"])
    gap = cfg["o2_col"] - cfg["o1_col"] - 2 * cfg["radius"] - 1
    if gap < 6:
        raise DegenerateConstruction("double cones need a spacelike gap of at least 6 nodes")
    w1 = bump(grid, (s, cfg["o1_col"]), cfg["w_radii"]) * O1.mask[:, :, None]
    w2 = bump(grid, (s, cfg["o2_col"]), cfg["w_radii"]) * O2.mask[:, :, None]
    box = Region(grid, (np.abs(w1[..., 0]) + np.abs(w2[..., 0])) > 0).bounding_box()
    W = rank_one_kernel(grid, box, w1, w2, name="nosolution-example")
    sys = PerturbedSystem(op, W)
    lam = cfg["lambda_fraction"] * sys.lambda0
    sys = sys.with_lambda(lam)

    def data_in(col):
        j = np.arange(grid.nx)
        prof = np.where(np.abs(j - col) < cfg["u_radius"], (1 - ((j - col) / cfg["u_radius"]) ** 2) ** 3, 0.0)
        return CauchyData(s, prof[:, None].astype(complex), np.zeros((grid.nx, 1), complex))

    u = data_in(cfg["o1_col"])
    f0 = solve_cauchy(op, u)
    coef = -lam * complex(inner_product(grid, w1, f0))
    Rw2 = propagator(op, w2)
    d2 = op.cauchy_data(Rw2, s)
    on_o2 = O2.mask[s] & O2.mask[s + 1]
    rw2_data = float(np.sqrt(grid.h * ((np.abs(d2.u0[on_o2]) ** 2).sum() + (np.abs(d2.u1[on_o2]) ** 2).sum())))
    prescribed = float(np.sqrt(grid.h * ((np.abs(u.u0[on_o2]) ** 2).sum() + (np.abs(u.u1[on_o2]) ** 2).sum())))
    # control: data far from O1 leaves w1 untouched
    ctrl_col = cfg["o1_col"] - cfg["radius"] - cfg["u_radius"] - 2
    ctrl_f0 = solve_cauchy(op, data_in(ctrl_col))
    ctrl_coef = -lam * complex(inner_product(grid, w1, ctrl_f0))
    # restriction consistency on O1 for a perturbed solution
    rng = np.random.default_rng(int(cfg.get("seed", 0)))
    gen = random_bump(grid, rng, (s - 8, s - 5), (cfg["o1_col"] - 3, cfg["o1_col"] + 3), real=True)
    f_lam = sys.propagator(gen)
    dl = op.cauchy_data(f_lam, s)
    keep = O1.mask[s] & O1.mask[s + 1]
    dl_o1 = CauchyData(s, np.where(keep[:, None], dl.u0, 0), np.where(keep[:, None], dl.u1, 0))
    f0_o1 = solve_cauchy(op, dl_o1)
    inner_o1 = O1.mask.copy()
    inner_o1[[0, -1]] = False
    cons = float(np.abs((f_lam - f0_o1)[inner_o1]).max() / max(np.abs(f_lam[inner_o1]).max(), 1e-300))
    scale = l2_norm(grid, w1) * l2_norm(grid, f0) * abs(lam)
    report = {
        "demo": "nosolution",
        "lambda": lam, "lambda0": sys.lambda0, "spacelike_gap_nodes": int(gap),
        "forced_coefficient": [coef.real, coef.imag],
        "forced_coefficient_relative": abs(coef) / max(scale, 1e-300),
        "Rw2_data_norm_on_O2": rw2_data, "prescribed_data_norm_on_O2": prescribed,
        "control_coefficient": abs(ctrl_coef),
        "restriction_consistency": cons,
        "tolerances": {"nonzero": cfg["tol"], "consistency": 1e-10},
        "pass": bool(abs(coef) > cfg["tol"] * scale and rw2_data > cfg["tol"] and prescribed == 0.0
                     and abs(ctrl_coef) < 1e-14 * max(scale, 1e-300) + 1e-300 and cons < 1e-10),
    }
    _write(out_dir, report, regions={"O1": O1, "O2": O2})
    return report


# -- star kernels -----------------------------------------------------------------

STAR_DEFAULTS = {
    "moyal": {"type": "moyal", "theta0": 0.5, "symbol": {"kind": "gaussian", "width": 0.5, "center": [0.1, -0.1]},
              "f_radius": 0.4, "points": [[0.0, 0.0], [0.15, -0.1], [-0.2, 0.1]], "y_points": 8},
    "local-nc": {"type": "local-nc", "theta0": 1.0, "symbol": {"kind": "bump", "radius": 0.15, "center": [0.05, 0.0]},
                 "f_radius": 0.2, "points": [[0.0, 0.0], [0.1, -0.05], [-0.08, 0.1]], "y_points": 12,
                 "quad_tol": 1e-7},
}


def star_convergence_demo(variant="moyal", config=None, out_dir=None, eps_list=(0.4, 0.2, 0.1, 0.05)):
    cfg = {**STAR_DEFAULTS[variant], **(config or {})}
    spec = star.build_spec(cfg)
    fr = cfg["f_radius"]

    def f(Y):
        r2 = (Y ** 2).sum(axis=-1) / fr ** 2
        return np.where(r2 < 1, (1 - r2) ** 3, 0.0) * np.cos(3 * Y[:, 0])

    X = np.asarray(cfg["points"], float)
    n = int(cfg["y_points"])
    qt = float(cfg.get("quad_tol", 1e-9))
    limit = star.apply_kernel(spec, X, f, None, (0.0, 0.0), fr, n)
    gaps = []
    for eps in eps_list:
        approx = star.apply_kernel(spec, X, f, eps, (0.0, 0.0), fr, n, qt)
        gaps.append(float(np.abs(approx - limit).max()))
    # gaps below the quadrature tolerance count as equal
    floor = max(1e-12, qt) * max(float(np.abs(limit).max()), 1e-300)
    monotone = all(gaps[i + 1] <= gaps[i] + floor for i in range(len(gaps) - 1))
    report = {"demo": "star", "variant": variant, "eps": list(eps_list), "gaps": gaps,
              "limit_scale": float(np.abs(limit).max()), "monotone": bool(monotone)}
    ok = monotone and gaps[-1] < gaps[0]
    if variant == "moyal":
        radii = moyal_support_radii(eps_list)
        report["support_radius"] = radii
        grows = all(radii[i + 1] > radii[i] for i in range(len(radii) - 1))
        report["support_grows"] = bool(grows)
        ok = ok and grows
    else:
        far = np.array([[1.3, 0.0], [0.2, -1.5]])
        outside = star.apply_kernel(spec, X, f, None, (1.5, 1.5), 0.3, 8)
        rows_out = star.local_nc_kernel(spec, far[:, None, :], X[None, :, :])
        report["outside_K_max"] = float(max(np.abs(outside).max(), np.abs(rows_out).max()))
        ok = ok and report["outside_K_max"] == 0.0
    report["pass"] = bool(ok)
    _write(out_dir, report)
    return report


def moyal_support_radii(eps_list, eta=1e-10):
    """Largest |y - x| along a ray where the cutoff Moyal kernel exceeds eta times its peak.

    A narrow symbol makes the kernel decay slowly, so the cutoff chi(eps(y - x))
    sets the support edge.
    """
    spec = star.StarProductSpec(1.0, star.GaussianSymbol((0.0, 0.0), 0.05), "moyal")
    x = np.zeros(2)
    radii = []
    for eps in eps_list:
        r = np.linspace(0.0, 1.2 / eps, 97)
        Y = np.stack([r / np.sqrt(2), r / np.sqrt(2)], -1)
        k = np.abs(star.moyal_eps_kernel(spec, eps, np.broadcast_to(x, Y.shape), Y))
        alive = r[k > eta * k.max()]
        radii.append(float(alive.max()) if len(alive) else 0.0)
    return radii
