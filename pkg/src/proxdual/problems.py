"""Instance generators and closed-form specialist solvers.

Random streams
--------------
Every random array is drawn from its own ``numpy.random.Philox`` (4x64,
counter based) stream keyed by ``(seed, stream_id)``; the stream ids are the
``STREAM_*`` constants below.  Changing how one array is drawn therefore never
shifts another, and the instances depend only on the Philox specification and
numpy's ``Generator`` sampling routines.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dualcore import DualProblem
from .linmap import DenseRows, EntryMask, LinearMap, SingleSum
from .proxlib import (
    EdmConeProjection,
    HardThreshold,
    PositivePartTopK,
    ProxOperator,
    QuadraticShift,
    RankProjection,
    Scad,
    SeparableBlocks,
    hard_threshold,
)

__all__ = [
    "Instance",
    "rng_stream",
    "gen_lowrank_diag",
    "gen_edm_helix",
    "gen_scad",
    "gen_l0_regression",
    "gen_sparse_simplex",
    "l0_dual_problem",
    "sparse_simplex_project",
    "sparse_simplex_root_1d",
    "sparse_simplex_matrix_project",
    "l0_regression_dual_solve",
    "l0_regression_objective",
    "composite_dual_residual",
    "L0Result",
]

PRNG_VERSION = "philox4x64-v1"

STREAM_U, STREAM_V, STREAM_NOISE = 1, 2, 3
STREAM_OMEGA, STREAM_EDM_NOISE = 11, 12
STREAM_SENSING, STREAM_SUPPORT, STREAM_SIGNAL, STREAM_XI = 21, 22, 23, 24
STREAM_L0 = 31
STREAM_SIMPLEX = 41


def rng_stream(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[int(seed) & (2**64 - 1), int(stream)]))


@dataclass
class Instance:
    dual_problem: DualProblem
    ground_truth: np.ndarray
    observation: np.ndarray
    reference_solution: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> str:
        """Metadata plus dense row-major arrays, 17 significant digits."""
        p = self.dual_problem

        def arr(a):
            return None if a is None else {"shape": list(np.shape(a)), "data": np.ravel(a).tolist()}

        doc = {
            "prng": PRNG_VERSION,
            "metadata": self.metadata,
            "prox": p.prox.to_dict(),
            "map": p.map.to_dict(),
            "b": arr(p.b),
            "z": arr(p.z),
            "ground_truth": arr(self.ground_truth),
            "observation": arr(self.observation),
            "reference_solution": arr(self.reference_solution),
        }
        # repr(float) is shortest round-trip, at most 17 significant digits
        return json.dumps(doc, indent=None, default=_json_default)

    @classmethod
    def from_json(cls, text: str) -> "Instance":
        doc = json.loads(text)

        def arr(d):
            return None if d is None else np.array(d["data"], dtype=float).reshape(d["shape"])

        prox = ProxOperator.from_dict(doc["prox"])
        linmap = LinearMap.from_dict(doc["map"])
        p = DualProblem(prox, linmap, arr(doc["b"]), arr(doc["z"]))
        return cls(p, arr(doc["ground_truth"]), arr(doc["observation"]),
                   arr(doc["reference_solution"]), doc["metadata"])


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


# ---------------------------------------------------------------------------
# generators


def gen_lowrank_diag(n: int, r: int = 5, seed: int = 0) -> Instance:
    """Rank-``r`` projection of a noisy ``U V^T`` with the diagonal fixed."""
    if not 1 <= r <= n:
        raise ValueError(f"need 1 <= r <= n, got r={r}, n={n}")
    U = rng_stream(seed, STREAM_U).standard_normal((n, r))
    V = rng_stream(seed, STREAM_V).standard_normal((n, r))
    E = rng_stream(seed, STREAM_NOISE).standard_normal((n, n))
    Xbar = U @ V.T
    Z = Xbar + E
    A = EntryMask.diagonal(n)
    p = DualProblem(RankProjection(r=r), A, np.diag(Xbar).copy(), Z)
    meta = {"family": "lowrank", "n": n, "r": r, "m": n, "seed": seed}
    return Instance(p, Xbar, Z, None, meta)


def helix_points(n: int) -> np.ndarray:
    t = 2.0 * np.pi * np.arange(n) / (n - 1)
    return np.stack([4 * np.cos(3 * t), 4 * np.sin(3 * t), 2 * t], axis=1)


def squared_distances(P: np.ndarray) -> np.ndarray:
    g = np.sum(P * P, axis=1)
    D = g[:, None] + g[None, :] - 2.0 * P @ P.T
    np.fill_diagonal(D, 0.0)
    return np.maximum(0.5 * (D + D.T), 0.0)


def gen_edm_helix(n: int, r: int = 3, sigma: float = 1e-2, seed: int = 0) -> Instance:
    """Low-rank EDM projection with exact entries on a random pair set.

    Each unordered off-diagonal pair joins the exact set with probability
    ``1/n``; the remaining pairs get noise ``sigma * s * eps`` with ``s`` the
    standard deviation of the true pairwise squared distances.  The symmetric
    entry map reads ``D_ij + D_ji`` off the diagonal, so those rows of ``b``
    hold ``2 d_ij``.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    Dbar = squared_distances(helix_points(n))
    iu, ju = np.triu_indices(n, k=1)
    pick = rng_stream(seed, STREAM_OMEGA).random(iu.size) < 1.0 / n
    omega = list(zip(iu[pick].tolist(), ju[pick].tolist()))
    d_true = Dbar[iu, ju]
    s = float(np.std(d_true))
    eps = rng_stream(seed, STREAM_EDM_NOISE).standard_normal(iu.size)
    noisy = d_true + sigma * s * eps
    noisy[pick] = d_true[pick]
    Z = np.zeros((n, n))
    Z[iu, ju] = noisy
    Z[ju, iu] = noisy
    entries = [(i, i) for i in range(n)] + omega
    A = EntryMask((n, n), entries, symmetric=True)
    b = np.concatenate([np.zeros(n), 2.0 * Dbar[iu[pick], ju[pick]]])
    p = DualProblem(EdmConeProjection(r=r), A, b, Z)
    meta = {"family": "edm", "n": n, "r": r, "sigma": sigma, "seed": seed,
            "omega_size": len(omega), "m": A.output_dim, "std_distance": s}
    return Instance(p, Dbar, Z, None, meta)


def gen_scad(n: int, rho: float = 0.05, sigma: float = 0.01, lam: float = 0.1,
             seed: int = 0, mu: float = 1.0, a: float = 3.7) -> Instance:
    """SCAD prox step with an orthonormal-row sensing matrix, ``m = ceil(n/10)``."""
    if n < 20:
        raise ValueError("need n >= 20")
    m = math.ceil(n / 10)
    k = math.ceil(rho * n)
    G = rng_stream(seed, STREAM_SENSING).standard_normal((m, n))
    Q, _ = np.linalg.qr(G.T)
    A = Q.T.copy()
    support = rng_stream(seed, STREAM_SUPPORT).choice(n, size=k, replace=False)
    xbar = np.zeros(n)
    xbar[np.sort(support)] = rng_stream(seed, STREAM_SIGNAL).standard_normal(k)
    z = xbar + sigma * rng_stream(seed, STREAM_XI).standard_normal(n)
    p = DualProblem(Scad(lam=lam, mu=mu, a=a), DenseRows(A), A @ xbar, z)
    meta = {"family": "scad", "n": n, "m": m, "k": k, "rho": rho, "sigma": sigma,
            "lam": lam, "mu": mu, "a": a, "seed": seed}
    return Instance(p, xbar, z, None, meta)


def gen_sparse_simplex(n: int, k: int, seed: int = 0) -> Instance:
    """Sparse simplex projection of a Gaussian point, with its closed-form solution."""
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= k < n, got k={k}, n={n}")
    z = rng_stream(seed, STREAM_SIMPLEX).standard_normal(n) / np.sqrt(n)
    p = DualProblem(PositivePartTopK(k=k), SingleSum(n), np.ones(1), z)
    x, y = sparse_simplex_project(z, k)
    meta = {"family": "sparse-simplex", "n": n, "k": k, "m": 1, "seed": seed, "multiplier": y}
    return Instance(p, x, z, x, meta)


# ---------------------------------------------------------------------------
# sparse simplex


def sparse_simplex_project(z, k: int):
    """Projection onto ``{x >= 0, e^T x = 1, ||x||_0 <= k}`` and its multiplier.

    Sort ``z`` descending, form ``y_j = (1 - sum_{i<=j} z_(i)) / j`` and take
    the largest ``j <= k`` with ``z_(j) + y_j > 0``.  The point is the top-``k``
    positive part of ``z + y``.
    """
    z = np.asarray(z, dtype=float)
    n = z.size
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= k < n, got k={k}, n={n}")
    order = np.argsort(-z, kind="stable")
    zs = z[order[:k]]
    ys = (1.0 - np.cumsum(zs)) / np.arange(1, k + 1)
    ok = np.flatnonzero(zs + ys > 0)
    y = float(ys[ok[-1]])
    x = np.zeros(n)
    idx = order[: ok[-1] + 1]
    x[idx] = z[idx] + y
    return x, y


def _topk_sum(z, k, y):
    return float(np.sum(np.maximum(np.sort(z)[::-1][:k] + y, 0.0)))


def sparse_simplex_root_1d(z, k: int) -> float:
    """Root of ``F(y) = e^T [(z + e y)^+]_k - 1`` by breakpoint search.

    ``F`` is continuous, piecewise linear and nondecreasing with breakpoints
    at ``-z_(i)``, ``i <= k``.  Bisection over the sorted breakpoints locates
    the piece containing the root, which is then solved exactly.
    """
    z = np.asarray(z, dtype=float)
    n = z.size
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= k < n, got k={k}, n={n}")
    top = np.sort(z)[::-1][:k]
    bps = -top  # ascending
    # F(bps[j]) has exactly j active terms (entries strictly above the breakpoint)
    lo, hi = 0, k - 1
    if _topk_sum(z, k, bps[hi]) - 1.0 < 0:
        lo = k
    else:
        while lo < hi:
            mid = (lo + hi) // 2
            if _topk_sum(z, k, bps[mid]) - 1.0 >= 0:
                hi = mid
            else:
                lo = mid + 1
    # root lies on the piece with `lo` active terms: sum_{i<lo} (top_i + y) = 1
    return float((1.0 - np.sum(top[:lo])) / lo)


def sparse_simplex_matrix_project(Z, k: int) -> np.ndarray:
    """Projection onto ``{X psd, tr X = 1, rank X <= k}`` through the eigenvalues."""
    S = np.asarray(Z, dtype=float)
    S = 0.5 * (S + S.T)
    w, U = np.linalg.eigh(S)
    x, _ = sparse_simplex_project(w, k)
    return (U * x) @ U.T


# ---------------------------------------------------------------------------
# l0-regularized regression via the composite dual


@dataclass
class L0Result:
    u: np.ndarray
    x: np.ndarray
    support: np.ndarray
    converged: bool
    updates: int
    method: str


def l0_regression_objective(A, b, x0, y0, lam, x) -> float:
    """``lam ||x||_0 + lam/2 ||Ax - b||^2 + 1/2 ||x - x0||^2 + 1/2 ||Ax - y0||^2``."""
    M = A.matrix if isinstance(A, DenseRows) else np.asarray(A, dtype=float)
    Ax = M @ x
    return float(lam * np.count_nonzero(x) + 0.5 * lam * np.sum((Ax - b) ** 2)
                 + 0.5 * np.sum((x - x0) ** 2) + 0.5 * np.sum((Ax - y0) ** 2))


def _support_solve(M, b, x0, y0, lam, S):
    AS = M[:, S]
    K = np.eye(M.shape[0]) + (1.0 + lam) * AS @ AS.T
    rhs = (1.0 + lam) * AS @ x0[S] - y0 - lam * b
    return -np.linalg.solve(K, rhs)


def l0_regression_dual_solve(A, b, x0, y0, lam: float, max_updates: int = 100,
                             brute_force_max_n: int = 24) -> L0Result:
    """Solve ``0 in A H(x0 + A^T u) - Prox_{lam g}(y0 - u)`` by support iteration.

    ``H`` is hard thresholding at ``sqrt(2 lam)`` (zero branch at the
    threshold) and ``g = 0.5||. - b||^2``.  For a fixed support ``S`` the
    inclusion is the linear system
    ``-(I + (1+lam) A_S A_S^T) u = (1+lam) A_S x0_S - y0 - lam b``; the support
    is recomputed from ``u`` until it stabilizes.  A cycling iteration falls
    back to enumerating all supports when ``n <= brute_force_max_n``.
    """
    if not lam > 0:
        raise ValueError("lam must be positive")
    M = A.matrix if isinstance(A, DenseRows) else np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    n = M.shape[1]
    tau = np.sqrt(2.0 * lam)

    def support_of(u):
        return np.abs(x0 + M.T @ u) > tau

    S = np.abs(x0) > tau
    seen = set()
    for it in range(1, max_updates + 1):
        u = _support_solve(M, b, x0, y0, lam, S)
        S_new = support_of(u)
        if np.array_equal(S_new, S):
            x = hard_threshold(x0 + M.T @ u, lam).point
            return L0Result(u, x, np.flatnonzero(S), True, it, "support-iteration")
        key = S.tobytes()
        if key in seen:
            break
        seen.add(key)
        S = S_new

    if n > brute_force_max_n:
        u = _support_solve(M, b, x0, y0, lam, S)
        x = hard_threshold(x0 + M.T @ u, lam).point
        return L0Result(u, x, np.flatnonzero(S), False, max_updates, "nonconverged")

    best = None
    for bits in itertools.product([False, True], repeat=n):
        S = np.array(bits)
        u = _support_solve(M, b, x0, y0, lam, S)
        if not np.array_equal(support_of(u), S):
            continue
        x = hard_threshold(x0 + M.T @ u, lam).point
        val = l0_regression_objective(M, b, x0, y0, lam, x)
        if best is None or val < best[0]:
            best = (val, u, x, S)
    if best is None:
        return L0Result(u, hard_threshold(x0 + M.T @ u, lam).point, np.flatnonzero(S),
                        False, max_updates, "nonconverged")
    _, u, x, S = best
    return L0Result(u, x, np.flatnonzero(S), True, max_updates, "enumeration")


def composite_dual_residual(fprox: ProxOperator, gprox: ProxOperator, A: LinearMap, x0, y0, u):
    """``A Prox_{lam f}(x0 + A^T u) - Prox_{lam g}(y0 - u)``."""
    u = np.asarray(u, dtype=float)
    return A.apply(fprox(x0 + A.adjoint(u)).point) - gprox(np.asarray(y0) - u).point


def gen_l0_regression(n: int = 8, m: int = 3, lam: float = 0.05, seed: int = 0,
                      density: float = 0.4, noise: float = 0.1):
    """Random composite prox data ``(A, b, x0, y0)`` with ``y0 = A x0``.

    ``x0`` is sparse with nonzero magnitudes in ``[2 tau, 4 tau]`` plus noise of
    size ``noise * tau`` (``tau = sqrt(2 lam)``), which keeps draws in the
    regime where the composite dual has a consistent support.
    """
    rng = rng_stream(seed, STREAM_L0)
    tau = np.sqrt(2.0 * lam)
    M = rng.standard_normal((m, n)) / np.sqrt(n)
    mag = tau * (2.0 + 2.0 * rng.random(n)) * np.sign(rng.standard_normal(n))
    xs = np.where(rng.random(n) < density, mag, 0.0)
    x0 = xs + noise * tau * rng.standard_normal(n)
    b = M @ xs + noise * tau * rng.standard_normal(m)
    return DenseRows(M), b, x0, M @ x0


def l0_brute_force(A, b, x0, y0, lam):
    """Global minimizer of the composite prox objective over all ``2^n`` supports."""
    M = A.matrix if isinstance(A, DenseRows) else np.asarray(A, dtype=float)
    n = M.shape[1]
    best = None
    for bits in itertools.product([False, True], repeat=n):
        S = np.flatnonzero(bits)
        x = np.zeros(n)
        if S.size:
            AS = M[:, S]
            # normal equations of lam/2||AS xs - b||^2 + 1/2||xs - x0_S||^2 + 1/2||AS xs - y0||^2
            H = (1.0 + lam) * AS.T @ AS + np.eye(S.size)
            rhs = lam * AS.T @ b + x0[S] + AS.T @ y0
            x[S] = np.linalg.solve(H, rhs)
        val = l0_regression_objective(M, b, x0, y0, lam, x)
        if best is None or val < best[0]:
            best = (val, x)
    return best[1], best[0]


def l0_composite_operators(b, lam):
    """Prox operators ``(lam ||.||_0, lam/2 ||. - b||^2)`` of the sparse regression split."""
    return HardThreshold(lam=lam), QuadraticShift(lam=lam, b=np.asarray(b, dtype=float))


def l0_dual_problem(A, b, x0, y0, lam) -> DualProblem:
    """The composite prox as one problem in ``(x, y)`` with constraint ``A x - y = 0``.

    Its dual gradient at ``u`` is :func:`composite_dual_residual` at ``u``.
    """
    M = A.matrix if isinstance(A, DenseRows) else np.asarray(A, dtype=float)
    m, n = M.shape
    f, g = l0_composite_operators(b, lam)
    op = SeparableBlocks(blocks=((f, n), (g, m)))
    return DualProblem(op, DenseRows(np.hstack([M, -np.eye(m)])), np.zeros(m),
                       np.concatenate([np.asarray(x0, dtype=float), np.asarray(y0, dtype=float)]))


def gen_l0_instance(n: int = 10, m: int = 3, lam: float = 0.05, seed: int = 0) -> Instance:
    A, b, x0, y0 = gen_l0_regression(n, m, lam, seed)
    p = l0_dual_problem(A, b, x0, y0, lam)
    res = l0_regression_dual_solve(A, b, x0, y0, lam)
    ref = np.concatenate([res.x, A.matrix @ res.x]) if res.converged else None
    meta = {"family": "l0-regression", "n": n, "m": m, "lam": lam, "seed": seed,
            "support_converged": res.converged}
    return Instance(p, ref, p.z.copy(), ref, meta)
