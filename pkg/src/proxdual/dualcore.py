"""Dual function of the affine-constrained prox problem.

For ``min lam f(x) + 0.5||x - z||^2  s.t.  A x = b`` the dual objective is

    Phi(y) = 0.5||v||^2 - E(v) - <b, y> - 0.5||z||^2,     v = z + A^* y,

with ``E`` the Moreau envelope of ``lam f``.  ``Phi`` is convex even for
nonconvex ``f``; ``A Prox(v) - b`` is a subgradient, and a multiplier where it
vanishes recovers a globally optimal primal point.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .linmap import DimensionError, LinearMap
from .proxlib import ProxOperator, ProxResult

__all__ = [
    "DualProblem",
    "DualEval",
    "Residuals",
    "GradientCheck",
    "NotSurjectiveError",
    "DomainError",
    "dual_value",
    "dual_gradient",
    "recover_primal",
    "residuals",
    "duality_gap_certificate",
    "fd_gradient_check",
]

SURJECTIVITY_RTOL = 1e-10


class NotSurjectiveError(ValueError):
    pass


class DomainError(ValueError):
    """The primal point lies outside ``dom f``."""


class DualEval(NamedTuple):
    value: float
    grad: np.ndarray
    x: np.ndarray
    prox: ProxResult


@dataclass(frozen=True)
class Residuals:
    feas: float
    obj: Optional[float] = None
    sol: Optional[float] = None


class GradientCheck(NamedTuple):
    error: float
    inconclusive: bool


def _dot(a, b) -> float:
    return float(np.vdot(np.asarray(a), np.asarray(b)).real)


class DualProblem:
    """Bundle of prox operator, constraint map, right-hand side and prox center."""

    def __init__(self, prox: ProxOperator, linmap: LinearMap, b, z, check: bool = True):
        b = np.atleast_1d(np.asarray(b, dtype=float))
        z = np.asarray(z, dtype=float)
        if b.shape != (linmap.output_dim,):
            raise DimensionError(f"b must have length {linmap.output_dim}, got shape {b.shape}")
        if z.shape != linmap.input_shape:
            raise DimensionError(f"z must have shape {linmap.input_shape}, got {z.shape}")
        self.prox = prox
        self.map = linmap
        self.b = b
        self.z = z
        self.half_z2 = 0.5 * _dot(z, z)
        self.bnorm = float(np.linalg.norm(b))
        if check:
            w = np.linalg.eigvalsh(linmap.gram)
            if not w[0] > SURJECTIVITY_RTOL * w[-1]:
                raise NotSurjectiveError(
                    f"A A^* is numerically singular (eigenvalues {w[0]:.3e} .. {w[-1]:.3e})"
                )

    @property
    def lam(self) -> float:
        return self.prox.lam

    @property
    def m(self) -> int:
        return self.map.output_dim

    def v(self, y):
        return self.z + self.map.adjoint(y)

    def value_and_grad(self, y) -> DualEval:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        aty = self.map.adjoint(y)
        v = self.z + aty
        res = self.prox(v)
        x = res.point
        # 0.5||v||^2 - 0.5||z||^2 expanded to avoid cancellation
        val = _dot(self.z, aty) + 0.5 * _dot(aty, aty) - res.envelope - _dot(self.b, y)
        grad = self.map.apply(x) - self.b
        return DualEval(val, grad, x, res)

    def objective(self, x) -> float:
        """``f_{lam,z}(x) = lam f(x) + 0.5||x - z||^2``."""
        return self.prox.objective(x, self.z)

    def feasibility(self, x) -> float:
        return float(np.linalg.norm(self.map.apply(x) - self.b)) / (1.0 + self.bnorm)

    @cached_property
    def _gram_factor(self):
        return cho_factor(self.map.gram)

    def solve_gram(self, r):
        return cho_solve(self._gram_factor, r)

    def project_affine(self, x):
        """Euclidean projection onto ``{x : A x = b}``."""
        return x - self.map.adjoint(self.solve_gram(self.map.apply(x) - self.b))

    def __repr__(self):
        return f"DualProblem(prox={self.prox!r}, map={self.map!r})"


def dual_value(p: DualProblem, y) -> float:
    return p.value_and_grad(y).value


def dual_gradient(p: DualProblem, y):
    ev = p.value_and_grad(y)
    return ev.grad, ev.x


def recover_primal(p: DualProblem, y):
    return p.prox(p.v(np.atleast_1d(np.asarray(y, dtype=float)))).point


def residuals(p: DualProblem, x, xref=None) -> Residuals:
    feas = p.feasibility(x)
    if xref is None:
        return Residuals(feas)
    fx = p.objective(x)
    fref = p.objective(xref)
    obj = abs(fx - fref) / (1.0 + abs(fref))
    sol = float(np.linalg.norm(np.asarray(x) - xref)) / (1.0 + float(np.linalg.norm(xref)))
    return Residuals(feas, obj, sol)


def duality_gap_certificate(p: DualProblem, x, y) -> float:
    """Relative gap ``|f_{lam,z}(x) + Phi(y)| / (1 + |f_{lam,z}(x)|)``."""
    fx = p.objective(x)
    if not np.isfinite(fx):
        raise DomainError("f(x) is infinite; x is outside dom f")
    return abs(fx + dual_value(p, y)) / (1.0 + abs(fx))


def _branch(res: ProxResult):
    return None if res.deriv is None else res.deriv.signature()


def fd_gradient_check(p: DualProblem, y, h: float) -> GradientCheck:
    """Central-difference check of the dual gradient, coordinate by coordinate.

    Reports ``inconclusive`` when the prox changes branch inside the stencil.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    base = p.value_and_grad(y)
    sig = _branch(base.prox)
    err = 0.0
    for i in range(y.size):
        e = np.zeros_like(y)
        e[i] = h
        up = p.value_and_grad(y + e)
        dn = p.value_and_grad(y - e)
        if _branch(up.prox) != sig or _branch(dn.prox) != sig:
            return GradientCheck(np.nan, True)
        fd = (up.value - dn.value) / (2.0 * h)
        err = max(err, abs(fd - base.grad[i]) / (1.0 + abs(base.grad[i])))
    return GradientCheck(err, False)
