"""Command-line front end: tree dumps, scheme derivation, simulation runs,
convergence studies and per-tree approximation-order studies.

Exit codes: 0 success, 2 validation error, 3 oracle failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from .engine import (QuadratureError, RegularityDomain, build_scheme,
                     enumerate_trees, pi_approx, pi_exact)
from .equations import get_equation
from .integrators import (ReferenceError, StepperConfig, make_stepper,
                          reference_solve, run_steps)
from .spectral import Field, Grid, rough_data
from .terms import node_to_dict, pretty
from .trees import graft, tree_to_dict, tree_to_dot

EXIT_VALIDATION = 2
EXIT_ORACLE = 3


def _config_hash(cfg: dict) -> str:
    payload = json.dumps(cfg, sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


def _write_csv(path: Path, header: list, rows: list, cfg: dict) -> None:
    lines = [f"# config={_config_hash(cfg)} {json.dumps(cfg, sort_keys=True)}"]
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(_fmt_cell(x) for x in row))
    path.write_text("\n".join(lines) + "\n")


def _fmt_cell(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _fit_slope(taus, errs):
    """Least-squares slope of log(err) vs log(tau), with fit residual."""
    mask = [e > 0 for e in errs]
    lx = np.log([t for t, m in zip(taus, mask) if m])
    ly = np.log([e for e, m in zip(errs, mask) if m])
    if len(lx) < 2:
        return float("nan"), float("nan")
    coeffs, res = np.polyfit(lx, ly, 1), None
    fit = np.polyval(coeffs, lx)
    resid = float(np.sqrt(np.mean((fit - ly) ** 2)))
    return float(coeffs[0]), resid


def _domain(args) -> RegularityDomain:
    return RegularityDomain(args.sobolev, args.basis)


def _taus(arg: str) -> list:
    taus = [float(t) for t in arg.split(",") if t]
    if any(b >= a for a, b in zip(taus, taus[1:])):
        raise ValueError("tau list must be strictly decreasing")
    return taus


def cmd_trees(args) -> int:
    eq = get_equation(args.eq)
    trees = enumerate_trees(eq, args.order, "o")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = [tree_to_dict(t) for t in trees]
    (out / f"trees_{args.eq}_p{args.order}.json").write_text(
        json.dumps({"equation": args.eq, "order": args.order,
                    "count": len(trees), "trees": data}, sort_keys=True, indent=1))
    dot = "\n".join(tree_to_dot(t, f"t{i}") for i, t in enumerate(trees))
    (out / f"trees_{args.eq}_p{args.order}.dot").write_text(dot + "\n")
    print(f"{len(trees)} trees written to {out}")
    return 0


def cmd_derive(args) -> int:
    eq = get_equation(args.eq)
    scheme = build_scheme(eq, "o", args.order - 1, _domain(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"scheme_{args.eq}_p{args.order}_s{args.sobolev:g}"
    (out / f"{stem}.json").write_text(json.dumps(
        {"equation": args.eq, "order": args.order, "sobolev": args.sobolev,
         "term": node_to_dict(scheme.term)}, sort_keys=True))
    (out / f"{stem}.txt").write_text(pretty(scheme.term) + "\n")
    print(f"scheme with {len(scheme.term.terms)} terms written to {out}")
    return 0


def _initial_data(args, grid: Grid):
    u0 = rough_data(args.sobolev, args.seed, grid)
    v = rough_data(2.0, args.seed + 1, grid, real=True) if args.eq in ("gp", "nls") else None
    if args.eq == "nls" and v is not None:
        v = Field.zero(grid)
    return u0, v


def cmd_run(args) -> int:
    eq_name = args.eq
    grid = Grid(args.modes, args.basis)
    u0, v = _initial_data(args, grid)
    taus = _taus(args.tau_list)
    scheme_name = {"gp": "gp1", "nls": "gp1", "sg": "sg1"}[eq_name]
    stepper = make_stepper(StepperConfig(scheme_name, taus[0]), v)
    u = run_steps(stepper, u0, taus[0], args.t_end)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = vars(args).copy()
    cfg.pop("func", None)
    rows = [(float(x), float(val.real), float(val.imag))
            for x, val in zip(grid.x, u.values)]
    _write_csv(out / f"run_{eq_name}.csv", ["x", "re_u", "im_u"], rows, cfg)
    meta = {"grid": {"n": grid.n, "basis": grid.basis, "length": grid.length},
            "norm_l2": u.norm(), "norm_h1": u.norm(1.0), "seed": args.seed}
    (out / f"run_{eq_name}.json").write_text(json.dumps(meta, sort_keys=True))
    print(f"final state written to {out}")
    return 0


def cmd_converge(args) -> int:
    taus = _taus(args.tau_list)
    if len(taus) < 3:
        raise ValueError("need at least three step sizes for a slope")
    grid = Grid(args.modes, args.basis)
    u0, v = _initial_data(args, grid)
    scheme_name = args.scheme or {"gp": "gp1", "nls": "gp1", "sg": "sg1"}[args.eq]
    ref_base = "gp2" if args.eq in ("gp", "nls") else "sg1"
    stepper = make_stepper(StepperConfig(scheme_name, taus[0]), v)
    ref_stepper = make_stepper(StepperConfig(ref_base, taus[0]), v)
    tau_ref = min(taus) / 64.0
    tau_ref = args.t_end / max(1, round(args.t_end / tau_ref))
    ref, drift = reference_solve(ref_stepper, u0, args.t_end, tau_ref,
                                 gate=args.ref_gate)
    rows = []
    errs = []
    for tau in taus:
        tau_eff = args.t_end / max(1, round(args.t_end / tau))
        t0 = time.perf_counter()
        u = run_steps(stepper, u0, tau_eff, args.t_end)
        wall = time.perf_counter() - t0
        err = (u - ref).norm()
        errs.append(err)
        rows.append((tau_eff, err, (u - ref).norm(args.sobolev), wall))
    slope, resid = _fit_slope([r[0] for r in rows], errs)
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    cfg["scheme"] = scheme_name
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = [r + (slope, resid) for r in rows]
    _write_csv(out / f"converge_{args.eq}_{scheme_name}.csv",
               ["tau", "err_l2", "err_hs", "wall_s", "slope", "resid"], rows, cfg)
    (out / f"converge_{args.eq}_{scheme_name}.meta.json").write_text(json.dumps(
        {"slope": slope, "resid": resid, "ref_drift": drift}, sort_keys=True))
    print(f"slope {slope:.3f} (residual {resid:.3f}) written to {out}")
    return 0


def cmd_tree_order(args) -> int:
    eq = get_equation(args.eq)
    trees = enumerate_trees(eq, args.order, "o")
    if not 0 <= args.tree_index < len(trees):
        raise ValueError(f"tree index out of range 0..{len(trees) - 1}")
    tree = trees[args.tree_index]
    grid = Grid(args.modes, args.basis)
    rng_env = _smooth_env(eq, grid, args.seed)
    r = args.order - 1
    term = pi_approx(tree, "o", r, _domain(args), eq)
    from .terms import evaluate

    taus = _taus(args.tau_list)
    rows = []
    errs = []
    for tau in taus:
        exact = pi_exact(graft("o", tree), eq, rng_env, tau)
        approx = evaluate(term, rng_env, tau, grid)
        err = (exact - approx).norm()
        rows.append((tau, err))
        errs.append(err)
    slope, resid = _fit_slope(taus, errs)
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = [r + (slope, resid) for r in rows]
    _write_csv(out / f"tree_order_{args.eq}_T{args.tree_index}.csv",
               ["tau", "err_l2", "slope", "resid"], rows, cfg)
    print(f"tree {tree}: slope {slope:.3f} (residual {resid:.3f})")
    return 0


def _smooth_env(eq, grid: Grid, seed: int) -> dict:
    u = rough_data(6.0, seed, grid)
    env = {"v_o": u, "v_ob": u.conj()}
    for pot in eq.potentials.values():
        if not pot.is_unit:
            env[pot.var] = rough_data(6.0, seed + 1, grid, real=True)
    return env


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lowreg",
                                 description="low-regularity integrator toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, order_default=1):
        p.add_argument("--eq", required=True, choices=("gp", "nls", "sg"))
        p.add_argument("--order", type=int, default=order_default)
        p.add_argument("--sobolev", type=float, default=2.0)
        p.add_argument("--basis", default="periodic",
                       choices=("periodic", "dirichlet"))
        p.add_argument("--modes", type=int, default=64)
        p.add_argument("--tau-list", default="0.0625,0.03125,0.015625")
        p.add_argument("--t-end", type=float, default=0.5)
        p.add_argument("--seed", type=int, default=7)
        p.add_argument("--out", default="out")

    p = sub.add_parser("trees", help="dump the tree sets (JSON + DOT)")
    common(p)
    p.set_defaults(func=cmd_trees)

    p = sub.add_parser("derive", help="derive and serialize a scheme")
    common(p)
    p.set_defaults(func=cmd_derive)

    p = sub.add_parser("run", help="run a simulation, snapshot the state")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("converge", help="global convergence study")
    common(p)
    p.add_argument("--scheme", default=None)
    p.add_argument("--ref-gate", type=float, default=1e-9)
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("tree-order", help="per-tree approximation order study")
    common(p, order_default=2)
    p.add_argument("--tree-index", type=int, default=0)
    p.set_defaults(func=cmd_tree_order)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (QuadratureError, ReferenceError) as exc:
        print(f"oracle failure: {exc}", file=sys.stderr)
        return EXIT_ORACLE


if __name__ == "__main__":
    sys.exit(main())
