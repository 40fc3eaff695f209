"""Experiment harness: instance generation, solver matrices, tables and traces."""
from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .dualcore import residuals
from .problems import (
    Instance,
    gen_edm_helix,
    gen_l0_instance,
    gen_lowrank_diag,
    gen_scad,
    gen_sparse_simplex,
)
from .solvers import SOLVERS, SolveOptions, SolveReport, Termination

__all__ = [
    "FAMILIES",
    "REFERENCE_POLICIES",
    "ExperimentConfig",
    "TableRow",
    "make_instance",
    "reference_solution",
    "run_experiment",
    "emit_table",
    "format_table",
    "parse_table",
    "write_trace",
    "default_seed",
]

FAMILIES = ("lowrank", "edm", "scad", "sparse-simplex", "l0-regression")
REFERENCE_POLICIES = ("ssn-1e-14", "closed-form", "none")
CSV_COLUMNS = ("method", "r_feas", "r_obj", "r_sol", "iter", "time_s")
TRACE_COLUMNS = ("iter", "phi", "grad_norm", "r_feas", "elapsed_s")

_DEFAULT_REF = {
    "lowrank": "ssn-1e-14",
    "edm": "ssn-1e-14",
    "scad": "ssn-1e-14",
    "sparse-simplex": "closed-form",
    "l0-regression": "closed-form",
}
_PROJECTION_FAMILIES = ("lowrank", "edm", "sparse-simplex")


def default_seed() -> int:
    s = os.environ.get("PROXDUAL_SEED")
    return int(s) if s not in (None, "") else 0


@dataclass
class ExperimentConfig:
    family: str = "lowrank"
    n: int = 50
    r: Optional[int] = None
    k: int = 3
    lam: float = 0.1
    sigma: Optional[float] = None
    rho: float = 0.05
    m: int = 3
    solvers: tuple = ("gd", "lbfgs", "ssn")
    options: dict = field(default_factory=dict)
    seed: int = field(default_factory=default_seed)
    out: Optional[str] = None
    reference: Optional[str] = None
    format: str = "csv"
    # with timing off, time_s is written as 0 so tables are byte-reproducible
    timing: bool = True

    def __post_init__(self):
        self.solvers = tuple(self.solvers)
        if self.reference is None:
            self.reference = _DEFAULT_REF.get(self.family, "none")
        if self.r is None:
            self.r = 3 if self.family == "edm" else 5

    def validate(self) -> "ExperimentConfig":
        fam = self.family
        if fam not in FAMILIES:
            raise ValueError(f"unknown family {fam!r}; choose from {', '.join(FAMILIES)}")
        if self.reference not in REFERENCE_POLICIES:
            raise ValueError(f"unknown reference policy {self.reference!r}")
        if self.format not in ("csv", "markdown"):
            raise ValueError(f"unknown format {self.format!r}")
        if not self.solvers:
            raise ValueError("no solvers requested")
        bad = [s for s in self.solvers if s not in SOLVERS]
        if bad:
            raise ValueError(f"unknown solvers {bad}; choose from {sorted(SOLVERS)}")
        if "altproj" in self.solvers and fam not in _PROJECTION_FAMILIES:
            raise ValueError(f"altproj needs a set projection; family {fam} is a prox")
        if self.reference == "closed-form" and fam not in ("sparse-simplex", "l0-regression"):
            raise ValueError(f"family {fam} has no closed-form reference")
        n = self.n
        if fam == "lowrank" and not 1 <= self.r <= n:
            raise ValueError("lowrank needs 1 <= r <= n")
        if fam == "edm" and not (n >= 4 and 1 <= self.r < n):
            raise ValueError("edm needs n >= 4 and 1 <= r < n")
        if fam == "scad":
            if n < 20 or not self.lam > 0 or not 0 < self.rho <= 1:
                raise ValueError("scad needs n >= 20, lam > 0, 0 < rho <= 1")
        if fam == "sparse-simplex" and not 1 <= self.k < n:
            raise ValueError("sparse-simplex needs 1 <= k < n")
        if fam == "l0-regression" and not (1 <= self.m < n and self.lam > 0):
            raise ValueError("l0-regression needs 1 <= m < n and lam > 0")
        if self.sigma is not None and self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        self.solve_options()
        return self

    def solve_options(self, **extra) -> SolveOptions:
        known = {f.name for f in fields(SolveOptions)}
        unknown = set(self.options) - known
        if unknown:
            raise ValueError(f"unknown solver options {sorted(unknown)}")
        return SolveOptions(**{**self.options, "seed": self.seed, **extra})

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["solvers"] = list(self.solvers)
        return d


@dataclass
class TableRow:
    method: str
    r_feas: float
    r_obj: Optional[float]
    r_sol: Optional[float]
    iter: int
    time_s: float
    termination: str = field(default="", compare=False)


def make_instance(cfg: ExperimentConfig) -> Instance:
    fam = cfg.family
    if fam == "lowrank":
        return gen_lowrank_diag(cfg.n, cfg.r, cfg.seed)
    if fam == "edm":
        sigma = 1e-2 if cfg.sigma is None else cfg.sigma
        return gen_edm_helix(cfg.n, cfg.r, sigma, cfg.seed)
    if fam == "scad":
        sigma = 0.01 if cfg.sigma is None else cfg.sigma
        return gen_scad(cfg.n, rho=cfg.rho, sigma=sigma, lam=cfg.lam, seed=cfg.seed)
    if fam == "sparse-simplex":
        return gen_sparse_simplex(cfg.n, cfg.k, cfg.seed)
    if fam == "l0-regression":
        return gen_l0_instance(cfg.n, cfg.m, cfg.lam, cfg.seed)
    raise ValueError(f"unknown family {fam!r}")


def reference_solution(inst: Instance, cfg: ExperimentConfig):
    """Reference primal point per ``cfg.reference``; ``None`` if unavailable."""
    if cfg.reference == "none":
        return None
    if cfg.reference == "closed-form":
        return inst.reference_solution
    opts = cfg.solve_options(tol=1e-14, iter_limit=max(200, cfg.options.get("iter_limit", 0)))
    rep = SOLVERS["ssn"](inst.dual_problem, opts)
    return rep.x if rep.converged else None


def write_trace(report: SolveReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for t in report.trace:
            w.writerow([t.iter, repr(t.phi), repr(t.grad_norm), repr(t.r_feas), f"{t.elapsed:.6f}"])


def _run_one(name, p, opts) -> SolveReport:
    try:
        return SOLVERS[name](p, opts)
    except Exception as exc:  # reported as a row, not raised
        return SolveReport(_METHOD.get(name, name), np.asarray(p.z), None,
                           residuals(p, p.z), 0, 0.0, Termination.ERROR,
                           info={"error": f"{type(exc).__name__}: {exc}"})


_METHOD = {"gd": "D-GD", "lbfgs": "D-LBFGS", "ssn": "D-SSN", "admm": "P-ADMM", "altproj": "P-AltProj"}


def run_experiment(cfg: ExperimentConfig, instance: Optional[Instance] = None):
    """Run every configured solver on one instance; returns ``(rows, reports)``.

    Traces go to ``<out>/trace_<method>.csv`` when ``cfg.out`` is set.
    """
    cfg.validate()
    inst = instance if instance is not None else make_instance(cfg)
    p = inst.dual_problem
    xref = reference_solution(inst, cfg)
    opts = cfg.solve_options()
    outdir = Path(cfg.out) if cfg.out else None
    if outdir:
        outdir.mkdir(parents=True, exist_ok=True)
    rows, reports = [], []
    for name in cfg.solvers:
        rep = _run_one(name, p, opts)
        res = residuals(p, rep.x, xref)
        rows.append(_at_table_precision(TableRow(
            rep.solver, res.feas, res.obj, res.sol, rep.iterations,
            rep.wall_time_secs if cfg.timing else 0.0, rep.termination.value)))
        reports.append(rep)
        if outdir:
            write_trace(rep, outdir / f"trace_{rep.solver}.csv")
    return rows, reports


def _at_table_precision(row: TableRow) -> TableRow:
    """Round to the emitted precision so tables round-trip exactly."""
    back = parse_table(format_table([row]))[0]
    back.termination = row.termination
    return back


def _fmt_res(v):
    return "nan" if v is None or not math.isfinite(v) else f"{v:.2e}"


def _cells(row: TableRow):
    return [row.method, _fmt_res(row.r_feas), _fmt_res(row.r_obj), _fmt_res(row.r_sol),
            str(int(row.iter)), f"{row.time_s:.2f}"]


def format_table(rows, fmt: str = "csv") -> str:
    rows = list(rows)
    if not rows:
        raise ValueError("refusing to emit an empty table")
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in rows:
            w.writerow(_cells(row))
        return buf.getvalue()
    if fmt == "markdown":
        head = ["Method", "R_feas", "R_obj", "R_sol", "Iter", "Time(s)", "Status"]
        lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
        for row in rows:
            lines.append("| " + " | ".join(_cells(row) + [row.termination or "-"]) + " |")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown format {fmt!r}")


def emit_table(rows, fmt: str = "csv", path=None) -> str:
    """Format ``rows`` and write them to ``path`` if given; returns the text."""
    text = format_table(rows, fmt)
    if path is not None:
        Path(path).write_text(text)
    return text


def _parse_res(s):
    v = float(s)
    return None if math.isnan(v) else v


def parse_table(text: str):
    """Inverse of the CSV form of :func:`emit_table`."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != CSV_COLUMNS:
        raise ValueError(f"unexpected header {header}")
    return [TableRow(m, float(f), _parse_res(o), _parse_res(s), int(i), float(t))
            for m, f, o, s, i, t in reader]

