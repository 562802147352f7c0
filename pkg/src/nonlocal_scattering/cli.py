"""Command line front end: config parsing, run orchestration and report emission.

Exit codes: 0 all embedded checks pass, 1 a check failed or a run raised,
2 the config could not be parsed.
"""
from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import experiments, scattering
from .green import advanced, dalembert_oracle, propagator, retarded
from .hyperbolic import WaveOperator, build_operator
from .kernels import build_kernel, write_kernel_csv
from .lattice import GridSpec, MarginError, empirical_support, l2_norm, write_field_csv
from .perturbed import CouplingTooLarge, PerturbedSystem, ResidualFailure

SUBCOMMANDS = ("norm-bound", "green-check", "solve", "scatter", "demo", "forms")
DEMOS = ("compact", "nonunique", "nosolution", "star")

DEFAULTS = {
    "system": {"kind": "wave", "preset": "free"},
    "grid": None,            # {"nt", "nx", "h"}; filled from --grid-scale
    "tau_minus": None,       # slice bounds in time units; filled from --grid-scale
    "tau_plus": None,
    "kernel": {"type": "bump", "rank": 4, "symmetry": "auto", "real": True, "norm": 1.0, "box": None},
    "lambda": None,          # explicit coupling; None means lambda_fraction * lambda0
    "lambda_fraction": 0.5,
    "safety": 0.9,
    "series_tol": 1e-14,
    "residual_tol": 1e-10,
    "samples": 4,
    "check_tol": 1e-8,
    "variant": "moyal",      # star demo variant
    "demo": {},              # passed through to the demo
}


class ConfigError(ValueError):
    pass


# -- JSON output -----------------------------------------------------------------

def _fmt_float(v):
    if math.isnan(v):
        return '"nan"'
    if math.isinf(v):
        return '"inf"' if v > 0 else '"-inf"'
    return format(v, ".17g")


def _emit(obj, indent, level, out):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        for i, (k, v) in enumerate(obj.items()):
            out.append(pad + json.dumps(str(k)) + ": ")
            _emit(v, indent, level + 1, out)
            out.append(",\n" if i < len(obj) - 1 else "\n")
        out.append(end + "}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            out.append("[]")
            return
        out.append("[")
        for i, v in enumerate(seq):
            _emit(v, indent, level + 1, out)
            if i < len(seq) - 1:
                out.append(", ")
        out.append("]")
    elif obj is None:
        out.append("null")
    elif isinstance(obj, (bool, np.bool_)):
        out.append("true" if obj else "false")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(_fmt_float(float(obj)))
    elif isinstance(obj, (complex, np.complexfloating)):
        _emit([obj.real, obj.imag], indent, level, out)
    else:
        out.append(json.dumps(str(obj)))


def dump_json(obj, indent=2):
    """Deterministic JSON with floats at 17 significant digits and complex numbers as [re, im]."""
    out = []
    _emit(obj, indent, 0, out)
    return "".join(out) + "\n"


# -- config ---------------------------------------------------------------------

def _key_line(text, key):
    needle = json.dumps(key)
    for i, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return i
    return 1


def parse_config(text, source="<config>"):
    """Parse a JSON config; ConfigError messages carry source:line."""
    try:
        raw = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as e:
        raise ConfigError(f"{source}:{e.lineno}:{e.colno}: {e.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}:1: top level must be an object")
    for k in raw:
        if k not in DEFAULTS and k != "seed":
            raise ConfigError(f"{source}:{_key_line(text, k)}: unknown key {k!r}")
    checks = {"lambda_fraction": (int, float), "safety": (int, float), "series_tol": (int, float),
              "residual_tol": (int, float), "samples": (int,), "check_tol": (int, float),
              "system": (dict,), "kernel": (dict,), "demo": (dict,), "variant": (str,), "seed": (int,)}
    for k, types in checks.items():
        if k in raw and (not isinstance(raw[k], types) or isinstance(raw[k], bool)):
            raise ConfigError(f"{source}:{_key_line(text, k)}: {k!r} has the wrong type")
    lam = raw.get("lambda")
    if lam is not None and not (isinstance(lam, (int, float)) and not isinstance(lam, bool)):
        raise ConfigError(f"{source}:{_key_line(text, 'lambda')}: 'lambda' must be a number or null")
    return raw


def resolve_config(raw, scale="small"):
    """Fill every default so the report can echo the complete run parameters."""
    cfg = copy.deepcopy(DEFAULTS)
    for k, v in raw.items():
        if isinstance(v, dict) and isinstance(cfg.get(k), dict):
            cfg[k] = {**cfg[k], **v}
        else:
            cfg[k] = v
    p = experiments.GRID_SCALES[scale]
    if cfg["grid"] is None:
        cfg["grid"] = {"nt": p["nt"], "nx": p["nx"], "h": 1.0 / 16}
    g = cfg["grid"]
    t0 = -(g["nt"] - 1) / 2 * g["h"]
    if cfg["tau_minus"] is None:
        cfg["tau_minus"] = t0 + p["tau_rows"][0] * g["h"]
    if cfg["tau_plus"] is None:
        cfg["tau_plus"] = t0 + p["tau_rows"][1] * g["h"]
    k = cfg["kernel"]
    if k.get("box") is None:
        mid = g["nx"] // 2
        k["box"] = [list(p["k_rows"]), [mid - p["k_half"], mid + p["k_half"]]]
    if k.get("symmetry") == "auto":
        k["symmetry"] = "hermitian" if cfg["system"].get("kind", "wave") == "wave" else "gamma0"
    cfg["grid_scale"] = scale
    return cfg


def build_system(cfg, seed):
    g = cfg["grid"]
    nt, nx, h = int(g["nt"]), int(g["nx"]), float(g["h"])
    N = 2 if cfg["system"].get("kind", "wave") == "dirac" else 1
    L = (nx - 1) / 2 * h
    t0 = -(nt - 1) / 2 * h
    grid = GridSpec(t0, t0 + (nt - 1) * h, L, h, N, cfg["tau_minus"], cfg["tau_plus"])
    op = build_operator(grid, cfg["system"])
    W = build_kernel(op.grid, cfg["kernel"], rng=seed)
    sys_ = PerturbedSystem(op, W, safety=cfg["safety"], series_tol=cfg["series_tol"],
                           residual_tol=cfg["residual_tol"], norm_seed=seed)
    lam = cfg["lambda"] if cfg["lambda"] is not None else cfg["lambda_fraction"] * sys_.lambda0
    return sys_.with_lambda(lam)


# -- subcommands --------------------------------------------------------------------

def _norm_block(sys_):
    est = sys_.norms
    return {"norms": {k: float(v.value) for k, v in est.items()},
            "iterations": {k: int(v.iterations) for k, v in est.items()},
            "converged": {k: bool(v.converged) for k, v in est.items()},
            "lambda0": sys_.lambda0}


def cmd_norm_bound(cfg, seed):
    sys_ = build_system(cfg, seed)
    block = _norm_block(sys_)
    return {**block, "lambda": sys_.lam, "pass": all(block["converged"].values())}, {}, sys_


def _random_compact(sys_, rng):
    g = sys_.grid
    a, b = sys_.tau_rows
    (_, _), (c0, c1) = sys_.W.box
    r = rng.integers(a, b - 4)
    c = rng.integers(c0 - 6, c1 + 2)
    return experiments.random_bump(g, rng, (r, r + 4), (c, c + 5))


def cmd_green_check(cfg, seed):
    sys_ = build_system(cfg, seed)
    op, g = sys_.op, sys_.grid
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(int(cfg["samples"])):
        f = _random_compact(sys_, rng)
        nf = l2_norm(g, f)
        row = {}
        for d, G in (("+", retarded), ("-", advanced)):
            u = G(op, f)
            row[f"DR{d}"] = l2_norm(g, op.apply(u) - f) / nf
            row[f"R{d}D"] = l2_norm(g, G(op, op.apply(f)) - f) / nf
            ul = sys_.glue_global(d, f)
            row[f"D_lam R_lam{d}"] = l2_norm(g, sys_.apply_D_lam(ul) - f) / nf
            row[f"glue_vs_resolvent{d}"] = l2_norm(g, ul - sys_.resolvent_global(d, f)) / max(l2_norm(g, ul), 1e-300)
        rows.append(row)
    worst = {k: max(r[k] for r in rows) for k in rows[0]}
    oracle = None
    if isinstance(op, WaveOperator) and cfg["system"].get("preset", "free") == "free":
        f = _random_compact(sys_, rng)
        oracle = l2_norm(g, retarded(op, f) - dalembert_oracle(op, f, "+")) / max(l2_norm(g, retarded(op, f)), 1e-300)
    ok = all(v < 1e-12 for k, v in worst.items() if k[0] in "DR" and "lam" not in k) \
        and all(v < cfg["residual_tol"] for k, v in worst.items() if "lam" in k or "glue" in k)
    return {"lambda": sys_.lam, "lambda0": sys_.lambda0, "samples": rows, "worst": worst,
            "dalembert_gap": oracle, "pass": bool(ok)}, {}, sys_


def cmd_solve(cfg, seed):
    sys_ = build_system(cfg, seed)
    g = sys_.grid
    rng = np.random.default_rng(seed)
    f = _random_compact(sys_, rng)
    out, fields = {}, {"source": f}
    for d in "+-":
        u, info = sys_.glue_global(d, f, report=True)
        r = l2_norm(g, sys_.apply_D_lam(u) - f) / l2_norm(g, f)
        sup = empirical_support(g, u)
        out[d] = {"residual": r, "solution_norm": l2_norm(g, u), "support_nodes": len(sup),
                  "diagnostics": info}
        fields[f"solution_{'plus' if d == '+' else 'minus'}"] = u
    ok = all(out[d]["residual"] < cfg["residual_tol"] for d in "+-")
    return {"lambda": sys_.lam, **_norm_block(sys_), "solutions": out, "pass": bool(ok)}, fields, sys_


def cmd_scatter(cfg, seed):
    sys_ = build_system(cfg, seed)
    rng = np.random.default_rng(seed)
    ga = experiments.incoming_generator(sys_, rng)
    f0 = propagator(sys_.op, ga)
    rep = scattering.scatter_report(sys_, f0, tol=cfg["check_tol"])
    s = scattering.scattering_formula(sys_, f0)
    rep["identity_gap"] = l2_norm(sys_.grid, s - f0) / l2_norm(sys_.grid, f0)
    if sys_.lam == 0:
        rep["pass"] = bool(rep["pass"] and rep["identity_gap"] == 0.0)
    return rep, {"incoming": f0, "outgoing": s}, sys_


def cmd_forms(cfg, seed):
    sys_ = build_system(cfg, seed)
    rng = np.random.default_rng(seed)
    tol = cfg["check_tol"]
    rows = []
    dirac = sys_.grid.n_components == 2
    for _ in range(int(cfg["samples"])):
        ga = experiments.incoming_generator(sys_, rng, real=not dirac)
        # one generator on each side of the slice so the forms pair nontrivially
        gb = experiments.outgoing_generator(sys_, rng, real=not dirac)
        if dirac:
            a = scattering.rep_perturbed(sys_, ga, (0, 0))
            b = scattering.rep_perturbed(sys_, gb, (0, 0))
            r_lo, r_hi = sys_.W.box[0]
            q0 = scattering.conserved_charge(sys_, a, b, r_lo - 3)
            q1 = scattering.conserved_charge(sys_, a, b, r_hi + 2)
            scale = max(abs(q0), 1e-300)
            rows.append({"delta_unitarity": scattering.delta_unitarity_gap(sys_, ga, gb),
                         "charge_drift": abs(q1 - q0) / scale})
        else:
            sg = scattering.sigma_moller_gaps(sys_, ga, gb)
            rows.append({"rho_preservation": scattering.rho_preservation_gap(sys_, ga, gb),
                         "sigma_moller_plus": sg["+"], "sigma_moller_minus": sg["-"]})
    worst = {k: max(r[k] for r in rows) for k in rows[0]}
    return {"lambda": sys_.lam, "lambda0": sys_.lambda0, "samples": rows, "worst": worst,
            "tolerance": tol, "pass": bool(all(v < tol for v in worst.values()))}, {}, sys_


def cmd_demo(cfg, seed, which, out_dir):
    demo_cfg = {**cfg["demo"], "seed": seed} if which == "nosolution" else dict(cfg["demo"])
    if which == "compact":
        return experiments.compact_solution_demo(demo_cfg or None, out_dir)
    if which == "nonunique":
        return experiments.nonunique_cauchy_demo(demo_cfg or None, out_dir)
    if which == "nosolution":
        return experiments.nosolution_cauchy_demo(demo_cfg, out_dir)
    return experiments.star_convergence_demo(cfg["variant"], demo_cfg or None, out_dir)


COMMANDS = {"norm-bound": cmd_norm_bound, "green-check": cmd_green_check, "solve": cmd_solve,
            "scatter": cmd_scatter, "forms": cmd_forms}


# -- orchestration ------------------------------------------------------------------

def run(config_path, subcommand, out_dir, seed=0, scale="small", demo=None, figures=False):
    """Run one config; returns the exit code and writes report.json (plus CSVs) into out_dir."""
    text = ""
    if config_path is not None:
        with open(config_path) as fh:
            text = fh.read()
    try:
        raw = parse_config(text, config_path or "<defaults>")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    seed = int(raw.get("seed", seed))
    raw.pop("seed", None)
    cfg = resolve_config(raw, scale)
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.perf_counter()
    fields, system = {}, None
    try:
        if subcommand == "demo":
            body = cmd_demo(cfg, seed, demo, out_dir)
        else:
            body, fields, system = COMMANDS[subcommand](cfg, seed)
        error = None
    except (CouplingTooLarge, ResidualFailure, MarginError, experiments.DegenerateConstruction,
            ValueError, RuntimeError) as e:
        body, error = {"pass": False}, f"{type(e).__name__}: {e}"
    report = {"subcommand": subcommand if demo is None else f"demo {demo}", "seed": seed,
              "config": cfg, "result": body, "error": error, "pass": bool(body.get("pass", False))}
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        fh.write(dump_json(report))
    if fields:
        for name, f in fields.items():
            write_field_csv(os.path.join(out_dir, f"{name}.csv"), system.grid, f)
        write_kernel_csv(os.path.join(out_dir, "kernel.csv"), system.W)
        if figures:
            render_figures(out_dir, system.grid, fields)
    status = "pass" if report["pass"] else "FAIL"
    print(f"{report['subcommand']}: {status} ({time.perf_counter() - t0:.2f} s) -> {out_dir}")
    if error:
        print(error, file=sys.stderr)
    return 0 if report["pass"] else 1


def render_figures(out_dir, grid, fields):
    """Optional PNG heat maps of |field|; needs the plots extra (matplotlib)."""
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("--figures needs matplotlib (pip install .[plots])", file=sys.stderr)
        return
    for name, f in fields.items():
        fig, ax = plt.subplots(figsize=(6, 3))
        ax.imshow(np.abs(f).max(axis=-1), origin="lower", aspect="auto",
                  extent=(grid.x[0], grid.x[-1], grid.t[0], grid.t[-1]))
        ax.set_xlabel("x")
        ax.set_ylabel("t")
        ax.set_title(name)
        fig.tight_layout()
        fig.savefig(os.path.join(out_dir, f"{name}.png"), dpi=100)
        plt.close(fig)


def _run_one(args):
    return run(*args)


def build_parser():
    p = argparse.ArgumentParser(prog="nonlocal-scattering",
                                description="Perturbed Green operators, scattering and counterexample certificates.")
    p.add_argument("--config", help="JSON config file, or a directory of *.json configs run concurrently")
    p.add_argument("--out", default="runs", help="output directory (default: runs)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid-scale", choices=sorted(experiments.GRID_SCALES), default="small")
    p.add_argument("--figures", action="store_true", help="also render PNG heat maps (needs matplotlib)")
    p.add_argument("--jobs", type=int, default=None, help="worker processes for a config directory")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("demo", nargs="?", choices=DEMOS)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.subcommand == "demo" and args.demo is None:
        print("demo needs one of: " + ", ".join(DEMOS), file=sys.stderr)
        return 2
    if args.subcommand != "demo" and args.demo is not None:
        print(f"{args.subcommand} takes no demo name", file=sys.stderr)
        return 2
    if args.config and os.path.isdir(args.config):
        paths = sorted(os.path.join(args.config, n) for n in os.listdir(args.config) if n.endswith(".json"))
        jobs = [(pth, args.subcommand, os.path.join(args.out, os.path.splitext(os.path.basename(pth))[0]),
                 args.seed, args.grid_scale, args.demo, args.figures) for pth in paths]
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            codes = list(ex.map(_run_one, jobs))
        return max(codes, default=0)
    return run(args.config, args.subcommand, args.out, args.seed, args.grid_scale, args.demo, args.figures)


if __name__ == "__main__":
    sys.exit(main())
