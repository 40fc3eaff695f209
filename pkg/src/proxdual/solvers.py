"""Dual and primal solvers for the affine-constrained prox problem.

Dual side (start at ``y = 0``): Barzilai-Borwein gradient descent with a
nonmonotone line search, L-BFGS and a regularized semismooth Newton method,
all with Armijo backtracking on ``Phi``.  Primal side: two-block ADMM with
adaptive penalty and plain alternating projection.

Every solver stops once the primal point ``x`` lies in ``dom f`` with
``||A x - b|| / (1 + ||b||) < tol``, or on the iteration/time limits.
"""
from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Optional

import numpy as np

from .dualcore import DualProblem, Residuals, residuals
from .proxlib import prox_jvp

__all__ = [
    "SolveOptions",
    "SolveReport",
    "TraceRecord",
    "Termination",
    "solve_gd_bb",
    "solve_lbfgs",
    "solve_ssn",
    "solve_admm",
    "solve_altproj",
    "SOLVERS",
]


class Termination(str, Enum):
    CONVERGED = "Converged"
    ITER_LIMIT = "IterLimit"
    TIME_LIMIT = "TimeLimit"
    LINE_SEARCH_FAIL = "LineSearchFail"
    ERROR = "Error"


@dataclass
class SolveOptions:
    tol: float = 1e-6
    time_limit_secs: float = 600.0
    iter_limit: int = 1000
    armijo_gamma: float = 1e-4
    backtrack_sigma: float = 0.5
    max_backtracks: int = 50
    nonmonotone_memory: int = 10
    lbfgs_memory: int = 10
    bb_min: float = 1e-10
    bb_max: float = 1e10
    # CG stops once ||residual|| <= ssn_cg_tol * ||F(y)||
    ssn_cg_tol: float = 1e-2
    ssn_cg_maxiter: int = 200
    # Newton regularization eps = min(ssn_reg_cap, ||F(y)|| / (1 + ||b||))
    ssn_reg_cap: float = 0.1
    admm_rho0: float = 1.0
    admm_mu: float = 10.0
    admm_tau: float = 2.0
    # function-value slack absorbing round-off once Phi stalls at machine precision
    armijo_slack: float = 1e-12
    seed: int = 0

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not (self.time_limit_secs > 0 and self.iter_limit > 0):
            raise ValueError("limits must be positive")
        if not 0 < self.backtrack_sigma < 1:
            raise ValueError("backtrack_sigma must lie in (0, 1)")
        if not 0 < self.armijo_gamma < 1:
            raise ValueError("armijo_gamma must lie in (0, 1)")
        if self.nonmonotone_memory < 1 or self.lbfgs_memory < 1:
            raise ValueError("memories must be positive")
        if not (self.admm_rho0 > 0 and self.admm_mu > 1 and self.admm_tau > 1):
            raise ValueError("ADMM needs rho0 > 0, mu > 1, tau > 1")


class TraceRecord(NamedTuple):
    iter: int
    phi: float
    grad_norm: float
    r_feas: float
    elapsed: float


@dataclass
class SolveReport:
    solver: str
    x: np.ndarray
    y: Optional[np.ndarray]
    residuals: Residuals
    iterations: int
    wall_time_secs: float
    termination: Termination
    trace: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.termination is Termination.CONVERGED

    @property
    def grad_norms(self) -> np.ndarray:
        return np.array([t.grad_norm for t in self.trace])


class _Run:
    """Bookkeeping shared by all solvers: trace, limits, stopping rule."""

    def __init__(self, name, p: DualProblem, opts: SolveOptions):
        self.name = name
        self.p = p
        self.opts = opts
        self.trace = []
        self.t0 = time.perf_counter()

    def elapsed(self):
        return time.perf_counter() - self.t0

    def step(self, k, phi, gnorm, x) -> Optional[Termination]:
        feas = self.p.feasibility(x)
        self.trace.append(TraceRecord(k, float(phi), float(gnorm), feas, self.elapsed()))
        if feas < self.opts.tol and self.p.prox.in_domain(x):
            return Termination.CONVERGED
        if self.elapsed() >= self.opts.time_limit_secs:
            return Termination.TIME_LIMIT
        if k >= self.opts.iter_limit:
            return Termination.ITER_LIMIT
        return None

    def report(self, x, y, k, term, **info) -> SolveReport:
        return SolveReport(
            solver=self.name,
            x=x,
            y=y,
            residuals=residuals(self.p, x),
            iterations=k,
            wall_time_secs=self.elapsed(),
            termination=term,
            trace=self.trace,
            info=info,
        )


def _init(p, opts, y0):
    opts = opts or SolveOptions()
    y = np.zeros(p.m) if y0 is None else np.array(y0, dtype=float).reshape(p.m)
    return opts, y


def _slack(opts, phi):
    return opts.armijo_slack * (1.0 + abs(phi))


def _backtrack(p, y, d, phi_ref, slope, t, opts):
    """Armijo backtracking along ``d`` from trial step ``t``; ``None`` on failure."""
    allow = _slack(opts, phi_ref)
    for _ in range(opts.max_backtracks):
        yn = y + t * d
        ev = p.value_and_grad(yn)
        if ev.value <= phi_ref + opts.armijo_gamma * t * slope + allow:
            return yn, ev, t
        t *= opts.backtrack_sigma
    return None


def solve_gd_bb(p: DualProblem, opts: SolveOptions = None, y0=None) -> SolveReport:
    """Gradient descent on ``Phi`` with BB1 steps and a nonmonotone Armijo rule."""
    opts, y = _init(p, opts, y0)
    run = _Run("D-GD", p, opts)
    ev = p.value_and_grad(y)
    hist = deque([ev.value], maxlen=opts.nonmonotone_memory)
    alpha = 1.0 / (1.0 + np.linalg.norm(ev.grad))
    k = 0
    while True:
        gnorm = float(np.linalg.norm(ev.grad))
        term = run.step(k, ev.value, gnorm, ev.x)
        if term:
            break
        found = _backtrack(p, y, -ev.grad, max(hist), -gnorm**2, alpha, opts)
        if found is None:
            term = Termination.LINE_SEARCH_FAIL
            break
        yn, evn, t = found
        s = yn - y
        u = evn.grad - ev.grad
        su = float(s @ u)
        if su > 0:
            alpha = float(np.clip((s @ s) / su, opts.bb_min, opts.bb_max))
        else:
            # gradient did not change along s: flat piece, try a longer step
            alpha = float(np.clip(10.0 * t, opts.bb_min, opts.bb_max))
        y, ev = yn, evn
        hist.append(ev.value)
        k += 1
    return run.report(ev.x, y, k, term)


def _two_loop(g, pairs):
    q = g.copy()
    alphas = []
    for s, u, rho in reversed(pairs):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * u
    if pairs:
        s, u, _ = pairs[-1]
        q *= (s @ u) / (u @ u)
    for (s, u, rho), a in zip(pairs, reversed(alphas)):
        beta = rho * (u @ q)
        q += (a - beta) * s
    return -q


def solve_lbfgs(p: DualProblem, opts: SolveOptions = None, y0=None) -> SolveReport:
    opts, y = _init(p, opts, y0)
    run = _Run("D-LBFGS", p, opts)
    ev = p.value_and_grad(y)
    pairs = deque(maxlen=opts.lbfgs_memory)
    k = 0
    restarts = 0
    while True:
        g = ev.grad
        gnorm = float(np.linalg.norm(g))
        term = run.step(k, ev.value, gnorm, ev.x)
        if term:
            break
        d = _two_loop(g, pairs)
        slope = float(g @ d)
        if not (np.isfinite(slope) and slope < 0):
            d, slope = -g, -(gnorm**2)
            pairs.clear()
            restarts += 1
        found = _backtrack(p, y, d, ev.value, slope, 1.0, opts)
        if found is None:
            term = Termination.LINE_SEARCH_FAIL
            break
        yn, evn, _ = found
        s = yn - y
        u = evn.grad - g
        su = float(s @ u)
        if su > 1e-12 * np.linalg.norm(s) * np.linalg.norm(u):
            pairs.append((s, u, 1.0 / su))
        y, ev = yn, evn
        k += 1
    return run.report(ev.x, y, k, term, restarts=restarts)


def _cg(matvec, rhs, tol, maxiter):
    """Conjugate gradients from zero.  Returns ``(x, breakdown)``."""
    x = np.zeros_like(rhs)
    r = rhs.copy()
    d = r.copy()
    rr = float(r @ r)
    for _ in range(maxiter):
        if np.sqrt(rr) <= tol:
            break
        Ad = matvec(d)
        dAd = float(d @ Ad)
        if not dAd > 0:
            return x, True
        a = rr / dAd
        x += a * d
        r -= a * Ad
        rr_new = float(r @ r)
        d = r + (rr_new / rr) * d
        rr = rr_new
    return x, False


def solve_ssn(p: DualProblem, opts: SolveOptions = None, y0=None) -> SolveReport:
    """Semismooth Newton on ``F(y) = A Prox(z + A^* y) - b``.

    Newton systems ``(J + eps I) d = -F`` are solved by matrix-free CG with
    ``J d = A Prox'(v)[A^* d]``; steps that are not descent directions fall
    back to ``-F`` and are counted in ``info["fallbacks"]``.
    """
    opts, y = _init(p, opts, y0)
    run = _Run("D-SSN", p, opts)
    op, A = p.prox, p.map
    ev = p.value_and_grad(y)
    k = 0
    fallbacks = 0
    cg_steps = 0
    while True:
        F = ev.grad
        nF = float(np.linalg.norm(F))
        term = run.step(k, ev.value, nF, ev.x)
        if term:
            break
        eps = min(opts.ssn_reg_cap, nF / (1.0 + p.bnorm))
        v = p.v(y)
        res = ev.prox

        def matvec(d, v=v, res=res, eps=eps):
            nonlocal cg_steps
            cg_steps += 1
            return A.apply(prox_jvp(op, v, A.adjoint(d), res)) + eps * d

        d, breakdown = _cg(matvec, -F, opts.ssn_cg_tol * nF, opts.ssn_cg_maxiter)
        slope = float(F @ d)
        if breakdown or not (np.isfinite(slope) and slope < 0):
            d, slope = -F, -(nF**2)
            fallbacks += 1
        found = _backtrack(p, y, d, ev.value, slope, 1.0, opts)
        if found is None:
            term = Termination.LINE_SEARCH_FAIL
            break
        y, ev, _ = found
        k += 1
    return run.report(ev.x, y, k, term, fallbacks=fallbacks, cg_steps=cg_steps)


def solve_admm(p: DualProblem, opts: SolveOptions = None, y0=None) -> SolveReport:
    """Two-block ADMM on ``lam f(x) + 0.5||w - z||^2`` s.t. ``A w = b``, ``x = w``.

    The trace records the primal objective at ``x`` and ``||x - w||``.
    """
    opts = opts or SolveOptions()
    run = _Run("P-ADMM", p, opts)
    rho = opts.admm_rho0
    lam = p.prox.lam
    op = p.prox.with_lambda(lam / rho)
    w = p.project_affine(p.z)
    u = np.zeros_like(w)
    x = op(w - u).point
    rp = float(np.linalg.norm(x - w))
    k = 0
    while True:
        term = run.step(k, p.objective(x), rp, x)
        if term:
            break
        w_old = w
        w = p.project_affine((p.z + rho * (x + u)) / (1.0 + rho))
        u = u + x - w
        rp = float(np.linalg.norm(x - w))
        rd = rho * float(np.linalg.norm(w - w_old))
        if rp > opts.admm_mu * rd:
            rho *= opts.admm_tau
            u = u / opts.admm_tau
            op = p.prox.with_lambda(lam / rho)
        elif rd > opts.admm_mu * rp:
            rho /= opts.admm_tau
            u = u * opts.admm_tau
            op = p.prox.with_lambda(lam / rho)
        x = op(w - u).point
        k += 1
    return run.report(x, None, k, term, rho=rho)


def solve_altproj(p: DualProblem, opts: SolveOptions = None, y0=None) -> SolveReport:
    """Alternate the affine projection and the set projection, starting at ``z``."""
    if not p.prox.is_projection:
        raise ValueError("alternating projection needs a set projection")
    opts = opts or SolveOptions()
    run = _Run("P-AltProj", p, opts)
    x = p.z
    k = 0
    while True:
        gap = float(np.linalg.norm(p.map.apply(x) - p.b))
        term = run.step(k, p.objective(x), gap, x)
        if term:
            break
        x = p.prox(p.project_affine(x)).point
        k += 1
    return run.report(x, None, k, term)


SOLVERS = {
    "gd": solve_gd_bb,
    "lbfgs": solve_lbfgs,
    "ssn": solve_ssn,
    "admm": solve_admm,
    "altproj": solve_altproj,
}

DUAL_SOLVERS = ("gd", "lbfgs", "ssn")
