"""Command line: ``proxdual {gen,solve,bench,accept}``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .bench import FAMILIES, REFERENCE_POLICIES, ExperimentConfig, emit_table, make_instance, run_experiment
from .problems import Instance

# flag dest -> (config key, SolveOptions key or None)
_FLAG_KEYS = {
    "family": "family",
    "n": "n",
    "r": "r",
    "k": "k",
    "m": "m",
    "lam": "lam",
    "sigma": "sigma",
    "rho": "rho",
    "seed": "seed",
    "out": "out",
    "format": "format",
    "reference": "reference",
}
_OPT_KEYS = {"tol": "tol", "iter_limit": "iter_limit", "time_limit": "time_limit_secs"}


def _common(sp: argparse.ArgumentParser):
    sp.add_argument("--config", help="JSON file with ExperimentConfig fields; flags override it")
    sp.add_argument("--family", choices=FAMILIES)
    sp.add_argument("--n", type=int)
    sp.add_argument("--r", type=int)
    sp.add_argument("--k", type=int)
    sp.add_argument("--m", type=int, help="rows of the l0-regression design")
    sp.add_argument("--lambda", dest="lam", type=float)
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--rho", type=float, help="sparsity ratio of the SCAD signal")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")


def _solver_flags(sp: argparse.ArgumentParser):
    sp.add_argument("--solver", action="append", help="repeatable: gd, lbfgs, ssn, admm, altproj")
    sp.add_argument("--tol", type=float)
    sp.add_argument("--iter-limit", dest="iter_limit", type=int)
    sp.add_argument("--time-limit", dest="time_limit", type=float)
    sp.add_argument("--format", choices=("csv", "markdown"))
    sp.add_argument("--reference", choices=REFERENCE_POLICIES)
    sp.add_argument("--no-timing", dest="timing", action="store_false", default=None,
                    help="write time_s as 0 for byte-reproducible tables")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="proxdual", description="Exact constrained proximal maps via the dual.")
    sub = ap.add_subparsers(dest="cmd", required=True)
    g = sub.add_parser("gen", help="generate an instance and write it as JSON")
    _common(g)
    s = sub.add_parser("solve", help="solve one instance with one or more solvers")
    _common(s)
    _solver_flags(s)
    s.add_argument("--instance", help="instance JSON written by 'gen'")
    b = sub.add_parser("bench", help="run a solver matrix and emit a table plus traces")
    _common(b)
    _solver_flags(b)
    sub.add_parser("accept", help="run the acceptance suite")
    return ap


def config_from_args(args) -> ExperimentConfig:
    d = {}
    if getattr(args, "config", None):
        d = json.loads(Path(args.config).read_text())
    for dest, key in _FLAG_KEYS.items():
        val = getattr(args, dest, None)
        if val is not None:
            d[key] = val
    opts = dict(d.get("options", {}))
    for dest, key in _OPT_KEYS.items():
        val = getattr(args, dest, None)
        if val is not None:
            opts[key] = val
    d["options"] = opts
    if getattr(args, "solver", None):
        d["solvers"] = args.solver
    if getattr(args, "timing", None) is not None:
        d["timing"] = args.timing
    return ExperimentConfig.from_dict(d).validate()


def _cmd_gen(args) -> int:
    cfg = config_from_args(args)
    text = make_instance(cfg).to_json()
    if cfg.out:
        Path(cfg.out).write_text(text)
        print(f"wrote {cfg.out}")
    else:
        print(text)
    return 0


def _cmd_solve(args) -> int:
    cfg = config_from_args(args)
    inst = Instance.from_json(Path(args.instance).read_text()) if args.instance else None
    if inst is not None and cfg.reference == "closed-form" and inst.reference_solution is None:
        cfg.reference = "none"
    rows, reports = run_experiment(cfg, inst)
    sys.stdout.write(emit_table(rows, cfg.format))
    for rep in reports:
        if "error" in rep.info:
            print(f"{rep.solver}: {rep.info['error']}", file=sys.stderr)
    return 0 if all(r.converged for r in reports) else 1


def _cmd_bench(args) -> int:
    cfg = config_from_args(args)
    rows, reports = run_experiment(cfg)
    ext = "csv" if cfg.format == "csv" else "md"
    path = Path(cfg.out) / f"table.{ext}" if cfg.out else None
    sys.stdout.write(emit_table(rows, cfg.format, path))
    if cfg.out:
        (Path(cfg.out) / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2))
    return 0


def _cmd_accept(args) -> int:
    from .acceptance import run_acceptance

    return run_acceptance()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return {"gen": _cmd_gen, "solve": _cmd_solve, "bench": _cmd_bench, "accept": _cmd_accept}[args.cmd](args)
    except (ValueError, OSError) as exc:
        print(f"proxdual: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
