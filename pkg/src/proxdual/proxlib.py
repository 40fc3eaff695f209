"""Proximal maps and projections with Moreau-envelope values.

Every evaluator returns a :class:`ProxResult` carrying the prox point, the
envelope ``lam * f(point) + 0.5 * ||point - t||^2`` and derivative data for
generalized-Jacobian products.  Set-valued cases resolve to one branch:

* hard thresholding keeps 0 at ``|t_i| = tau``,
* top-k truncation breaks ties by lowest index,
* rank truncation keeps the first ``r`` columns of the SVD.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Optional

import numpy as np

__all__ = [
    "Diagonal",
    "Spectral",
    "ProxResult",
    "ProxOperator",
    "Scad",
    "HardThreshold",
    "PositivePartTopK",
    "Nonnegative",
    "RankProjection",
    "PsdRankProjection",
    "EdmConeProjection",
    "QuadraticShift",
    "SeparableBlocks",
    "UnsupportedDerivative",
    "scad_prox",
    "scad_penalty",
    "hard_threshold",
    "positive_part_topk",
    "nonnegative_projection",
    "rank_projection",
    "psd_rank_projection",
    "edm_cone_projection",
    "quadratic_prox",
    "prox_jvp",
    "centering",
]

# relative tolerance used by membership tests of the projection sets
DOMAIN_TOL = 1e-8


class UnsupportedDerivative(TypeError):
    """The prox result carries no derivative information."""


@dataclass(frozen=True)
class Diagonal:
    """Elementwise slopes of a separable piecewise-linear prox."""

    slopes: np.ndarray

    def signature(self):
        return self.slopes.tobytes()


@dataclass(frozen=True)
class Spectral:
    """Eigen/singular factors of a spectral prox, kept for directional derivatives."""

    left: np.ndarray
    values: np.ndarray
    right: Optional[np.ndarray] = None
    kept: int = 0

    def signature(self):
        return self.kept


@dataclass(frozen=True)
class ProxResult:
    point: np.ndarray
    envelope: float
    deriv: Any = None


def _check_lam(lam):
    if not lam > 0:
        raise ValueError(f"prox parameter must be positive, got {lam}")


# ---------------------------------------------------------------------------
# separable scalar maps


def _firm_threshold(z, thresh, knee, slope):
    """Three-branch map 0 | slope*(z - thresh*sign z) | z with closed lower branches."""
    az = np.abs(z)
    low = az <= thresh
    high = az > knee
    mid = ~(low | high)
    x = np.where(high, z, 0.0)
    x = np.where(mid, slope * (z - thresh * np.sign(z)), x)
    slopes = np.where(high, 1.0, np.where(mid, slope, 0.0))
    return x, slopes


def scad_penalty(x, mu, a, lam):
    """``lam * phi(x)`` summed, for the penalty whose prox is :func:`scad_prox`.

    Per entry: ``lam*mu*|x| - x^2/(2a)`` for ``|x| <= a*mu*lam`` and the
    constant ``a*mu^2*lam^2/2`` beyond.  The curvature ``-1/a`` of the inner
    piece is what produces the ``1/(1-1/a)`` slope of the middle branch.
    """
    ax = np.abs(np.asarray(x, dtype=float))
    knee = a * mu * lam
    inner = lam * mu * ax - ax**2 / (2.0 * a)
    return float(np.sum(np.where(ax <= knee, inner, 0.5 * a * (mu * lam) ** 2)))


def scad_prox(z, mu, a, lam) -> ProxResult:
    if not a > 2:
        raise ValueError(f"SCAD needs a > 2, got {a}")
    if not mu > 0:
        raise ValueError(f"SCAD needs mu > 0, got {mu}")
    _check_lam(lam)
    z = np.asarray(z, dtype=float)
    x, slopes = _firm_threshold(z, mu * lam, a * mu * lam, 1.0 / (1.0 - 1.0 / a))
    env = scad_penalty(x, mu, a, lam) + 0.5 * float(np.sum((x - z) ** 2))
    return ProxResult(x, env, Diagonal(slopes))


def _scad_prox_step(z, mu, a, lam0, step) -> ProxResult:
    """Prox of ``(step/lam0) * (lam0 * phi)`` with the curvature fixed by ``lam0``.

    Used when a solver rescales the prox parameter (ADMM).  For
    ``step < a*lam0`` the map is the firm threshold; otherwise the scalar
    problem is concave on the inner piece and the minimizer is 0 or z.
    """
    if step == lam0:
        return scad_prox(z, mu, a, lam0)
    z = np.asarray(z, dtype=float)
    gamma = a * lam0
    ratio = step / lam0
    if step < gamma:
        x, slopes = _firm_threshold(z, mu * step, gamma * mu, 1.0 / (1.0 - step / gamma))
    else:
        cut = mu * np.sqrt(step * gamma)
        keep = np.abs(z) > cut
        x = np.where(keep, z, 0.0)
        slopes = keep.astype(float)
    env = ratio * scad_penalty(x, mu, a, lam0) + 0.5 * float(np.sum((x - z) ** 2))
    return ProxResult(x, env, Diagonal(slopes))


def hard_threshold(z, lam) -> ProxResult:
    """Prox of ``lam * ||x||_0``: keep entries with ``|z_i| > sqrt(2 lam)``."""
    _check_lam(lam)
    z = np.asarray(z, dtype=float)
    tau = np.sqrt(2.0 * lam)
    keep = np.abs(z) > tau
    x = np.where(keep, z, 0.0)
    env = lam * float(np.count_nonzero(x)) + 0.5 * float(np.sum((x - z) ** 2))
    return ProxResult(x, env, Diagonal(keep.astype(float)))


def positive_part_topk(z, k: int) -> ProxResult:
    """Projection onto ``{x >= 0, ||x||_0 <= k}``."""
    z = np.asarray(z, dtype=float)
    n = z.size
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    zp = np.maximum(z, 0.0)
    order = np.argsort(-zp, kind="stable")
    mask = np.zeros(n, dtype=bool)
    mask[order[:k]] = True
    x = np.where(mask, zp, 0.0)
    slopes = (mask & (z > 0)).astype(float)
    return ProxResult(x, 0.5 * float(np.sum((x - z) ** 2)), Diagonal(slopes))


def nonnegative_projection(z) -> ProxResult:
    z = np.asarray(z, dtype=float)
    x = np.maximum(z, 0.0)
    return ProxResult(x, 0.5 * float(np.sum((x - z) ** 2)), Diagonal((z > 0).astype(float)))


def quadratic_prox(w, b, lam) -> ProxResult:
    """Prox of ``lam * 0.5||y - b||^2``."""
    _check_lam(lam)
    w = np.asarray(w, dtype=float)
    b = np.asarray(b, dtype=float)
    if w.shape != b.shape:
        raise ValueError(f"shape mismatch {w.shape} vs {b.shape}")
    x = (w + lam * b) / (1.0 + lam)
    env = 0.5 * lam * float(np.sum((x - b) ** 2)) + 0.5 * float(np.sum((x - w) ** 2))
    return ProxResult(x, env, Diagonal(np.full(w.shape, 1.0 / (1.0 + lam))))


# ---------------------------------------------------------------------------
# spectral maps


def _sym(Z):
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2 or Z.shape[0] != Z.shape[1]:
        raise ValueError("expected a square matrix")
    return 0.5 * (Z + Z.T)


def rank_projection(Z, r: int) -> ProxResult:
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2 or not 1 <= r <= min(Z.shape):
        raise ValueError(f"rank must lie in [1, {min(Z.shape)}], got {r}")
    U, s, Vt = np.linalg.svd(Z, full_matrices=False)
    X = (U[:, :r] * s[:r]) @ Vt[:r]
    env = 0.5 * float(np.sum(s[r:] ** 2))
    return ProxResult(X, env, Spectral(U, s, Vt.T, kept=r))


def _psd_truncate(S, r):
    """Top-``r`` nonnegative part of a symmetric matrix; returns (X, w, U, kept)."""
    w, U = np.linalg.eigh(S)
    w, U = w[::-1], U[:, ::-1]
    keep = np.maximum(w[:r], 0.0)
    kept = int(np.count_nonzero(keep))
    X = (U[:, :r] * keep) @ U[:, :r].T
    return X, w, U, kept


def psd_rank_projection(Z, r: int) -> ProxResult:
    S = _sym(Z)
    n = S.shape[0]
    if not 1 <= r <= n:
        raise ValueError(f"rank must lie in [1, {n}], got {r}")
    X, w, U, kept = _psd_truncate(S, r)
    env = 0.5 * float(np.sum((X - np.asarray(Z, dtype=float)) ** 2))
    return ProxResult(X, env, Spectral(U, w, kept=kept))


def centering(n: int) -> np.ndarray:
    return np.eye(n) - np.full((n, n), 1.0 / n)


def _center(D):
    # J D J without forming J
    C = D - D.mean(axis=0, keepdims=True)
    return C - C.mean(axis=1, keepdims=True)


def edm_cone_projection(D, r: int) -> ProxResult:
    """Projection onto ``{D symmetric : -JDJ psd, rank(JDJ) <= r}``.

    Closed form ``-P(-JDJ) + (D - JDJ)`` where ``P`` keeps the ``r`` largest
    nonnegative eigenvalues.
    """
    S = _sym(D)
    n = S.shape[0]
    if not 1 <= r <= n:
        raise ValueError(f"rank must lie in [1, {n}], got {r}")
    JDJ = _center(S)
    JDJ = 0.5 * (JDJ + JDJ.T)
    P, w, U, kept = _psd_truncate(-JDJ, r)
    X = -P + (S - JDJ)
    env = 0.5 * float(np.sum((X - np.asarray(D, dtype=float)) ** 2))
    return ProxResult(X, env, Spectral(U, w, kept=kept))


# ---------------------------------------------------------------------------
# operator objects


@dataclass(frozen=True)
class ProxOperator:
    """A prox evaluator ``t -> Prox_{lam f}(t)`` together with ``f`` itself."""

    lam: float = 1.0
    is_projection = False
    convex = False

    def __call__(self, t) -> ProxResult:
        raise NotImplementedError

    def value(self, x) -> float:
        """``f(x)``, ``inf`` outside the domain."""
        raise NotImplementedError

    def in_domain(self, x) -> bool:
        return bool(np.isfinite(self.value(x)))

    def objective(self, x, t) -> float:
        """``lam f(x) + 0.5||x - t||^2``."""
        fx = self.value(x)
        quad = 0.5 * float(np.sum((np.asarray(x, dtype=float) - t) ** 2))
        if self.is_projection:
            return quad if np.isfinite(fx) else np.inf
        return self.lam * fx + quad

    def with_lambda(self, lam: float) -> "ProxOperator":
        return replace(self, lam=float(lam))

    def to_dict(self) -> dict:
        d = {"kind": type(self).__name__}
        for k, v in self.__dict__.items():
            d[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return d

    @staticmethod
    def from_dict(d: dict) -> "ProxOperator":
        d = dict(d)
        cls = _KINDS[d.pop("kind")]
        if cls is SeparableBlocks:
            d["blocks"] = tuple((ProxOperator.from_dict(op), int(n)) for op, n in d["blocks"])
        if "b" in d:
            d["b"] = np.asarray(d["b"], dtype=float)
        return cls(**d)


def _set_value(member: bool) -> float:
    return 0.0 if member else np.inf


@dataclass(frozen=True)
class Scad(ProxOperator):
    mu: float = 1.0
    a: float = 3.7
    # prox parameter that fixes the penalty's curvature; defaults to lam
    curvature_lam: Optional[float] = None

    def __post_init__(self):
        if not self.a > 2 or not self.mu > 0:
            raise ValueError("SCAD needs a > 2 and mu > 0")
        _check_lam(self.lam)
        if self.curvature_lam is None:
            object.__setattr__(self, "curvature_lam", float(self.lam))

    def __call__(self, t):
        return _scad_prox_step(t, self.mu, self.a, self.curvature_lam, self.lam)

    def value(self, x):
        return scad_penalty(x, self.mu, self.a, self.curvature_lam) / self.curvature_lam


@dataclass(frozen=True)
class HardThreshold(ProxOperator):
    def __post_init__(self):
        _check_lam(self.lam)

    def __call__(self, t):
        return hard_threshold(t, self.lam)

    def value(self, x):
        return float(np.count_nonzero(x))


@dataclass(frozen=True)
class PositivePartTopK(ProxOperator):
    k: int = 1
    is_projection = True

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be positive")

    def __call__(self, t):
        return positive_part_topk(t, self.k)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        tol = DOMAIN_TOL * max(1.0, float(np.max(np.abs(x), initial=0.0)))
        return _set_value(bool(np.all(x >= -tol)) and int(np.sum(np.abs(x) > tol)) <= self.k)


@dataclass(frozen=True)
class Nonnegative(ProxOperator):
    is_projection = True
    convex = True

    def __call__(self, t):
        return nonnegative_projection(t)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        tol = DOMAIN_TOL * max(1.0, float(np.max(np.abs(x), initial=0.0)))
        return _set_value(bool(np.all(x >= -tol)))


@dataclass(frozen=True)
class _RankLimited(ProxOperator):
    r: int = 1
    is_projection = True

    def __post_init__(self):
        if int(self.r) != self.r or self.r < 1:
            raise ValueError(f"rank must be a positive integer, got {self.r}")


@dataclass(frozen=True)
class RankProjection(_RankLimited):

    def __call__(self, t):
        return rank_projection(t, self.r)

    def value(self, x):
        s = np.linalg.svd(np.asarray(x, dtype=float), compute_uv=False)
        tail = s[self.r] if s.size > self.r else 0.0
        return _set_value(tail <= DOMAIN_TOL * max(1.0, s[0]))


@dataclass(frozen=True)
class PsdRankProjection(_RankLimited):

    def __call__(self, t):
        return psd_rank_projection(t, self.r)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        w = np.linalg.eigvalsh(_sym(x))[::-1]
        scale = max(1.0, float(np.abs(w).max(initial=0.0)))
        tol = DOMAIN_TOL * scale
        sym_ok = np.abs(x - x.T).max(initial=0.0) <= tol
        tail = w[self.r] if w.size > self.r else 0.0
        return _set_value(bool(sym_ok and w[-1] >= -tol and tail <= tol))


@dataclass(frozen=True)
class EdmConeProjection(_RankLimited):
    r: int = 3

    def __call__(self, t):
        return edm_cone_projection(t, self.r)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        w = np.linalg.eigvalsh(-_center(_sym(x)))[::-1]
        scale = max(1.0, float(np.abs(x).max(initial=0.0)))
        tol = DOMAIN_TOL * scale * x.shape[0]
        sym_ok = np.abs(x - x.T).max(initial=0.0) <= DOMAIN_TOL * scale
        tail = w[self.r] if w.size > self.r else 0.0
        return _set_value(bool(sym_ok and w[-1] >= -tol and tail <= tol))


@dataclass(frozen=True, eq=False)
class QuadraticShift(ProxOperator):
    """``f(y) = 0.5||y - b||^2``."""

    b: np.ndarray = field(default_factory=lambda: np.zeros(0))
    convex = True

    def __post_init__(self):
        _check_lam(self.lam)
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float))

    def __call__(self, t):
        return quadratic_prox(t, self.b, self.lam)

    def value(self, x):
        return 0.5 * float(np.sum((np.asarray(x, dtype=float) - self.b) ** 2))


@dataclass(frozen=True, eq=False)
class SeparableBlocks(ProxOperator):
    """Sum of operators acting on consecutive slices of one vector.

    ``lam`` is ignored; each block keeps its own prox parameter.
    """

    blocks: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if not self.blocks:
            raise ValueError("need at least one block")

    def _slices(self):
        start = 0
        for op, n in self.blocks:
            yield op, slice(start, start + n)
            start += n

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        parts = [op(t[sl]) for op, sl in self._slices()]
        point = np.concatenate([r.point for r in parts])
        env = sum(r.envelope for r in parts)
        if all(isinstance(r.deriv, Diagonal) for r in parts):
            deriv = Diagonal(np.concatenate([r.deriv.slopes for r in parts]))
        else:
            deriv = None
        return ProxResult(point, env, deriv)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return float(sum(op.value(x[sl]) for op, sl in self._slices()))

    def objective(self, x, t):
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        return float(sum(op.objective(x[sl], t[sl]) for op, sl in self._slices()))

    def with_lambda(self, lam):
        scale = lam / self.lam
        return SeparableBlocks(
            lam=lam, blocks=tuple((op.with_lambda(op.lam * scale), n) for op, n in self.blocks)
        )

    def to_dict(self):
        return {"kind": "SeparableBlocks", "lam": self.lam,
                "blocks": [[op.to_dict(), n] for op, n in self.blocks]}


_KINDS = {
    cls.__name__: cls
    for cls in (
        Scad,
        HardThreshold,
        PositivePartTopK,
        Nonnegative,
        RankProjection,
        PsdRankProjection,
        EdmConeProjection,
        QuadraticShift,
        SeparableBlocks,
    )
}


def prox_jvp(op: ProxOperator, at, direction, result: Optional[ProxResult] = None):
    """Apply one element of the generalized Jacobian of ``op`` at ``at``.

    Diagonal payloads multiply elementwise.  Spectral payloads use a forward
    difference with step ``1e-8 * (1 + ||at||)`` along the normalized direction.
    """
    if result is None:
        result = op(at)
    direction = np.asarray(direction, dtype=float)
    deriv = result.deriv
    if isinstance(deriv, Diagonal):
        return deriv.slopes * direction
    if isinstance(deriv, Spectral):
        dnorm = float(np.linalg.norm(direction))
        if dnorm == 0.0:
            return np.zeros_like(direction)
        at = np.asarray(at, dtype=float)
        h = 1e-8 * (1.0 + float(np.linalg.norm(at)))
        moved = op(at + (h / dnorm) * direction).point
        return (moved - result.point) * (dnorm / h)
    raise UnsupportedDerivative(f"{type(op).__name__} result has no derivative payload")
