import itertools

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from proxdual.acceptance import sparse_simplex_brute_force
from proxdual.dualcore import duality_gap_certificate, residuals
from proxdual.linmap import DenseRows
from proxdual.problems import (
    PRNG_VERSION,
    Instance,
    composite_dual_residual,
    gen_edm_helix,
    gen_l0_instance,
    gen_l0_regression,
    gen_lowrank_diag,
    gen_scad,
    gen_sparse_simplex,
    l0_brute_force,
    l0_composite_operators,
    l0_regression_dual_solve,
    l0_regression_objective,
    rng_stream,
    sparse_simplex_matrix_project,
    sparse_simplex_project,
    sparse_simplex_root_1d,
)
from proxdual.proxlib import QuadraticShift
from proxdual.solvers import DUAL_SOLVERS, SOLVERS, SolveOptions, solve_ssn

rng = np.random.default_rng(3)

GENERATORS = [
    lambda s: gen_lowrank_diag(12, 3, s),
    lambda s: gen_edm_helix(20, 3, 1e-2, s),
    lambda s: gen_scad(60, lam=0.2, seed=s),
    lambda s: gen_sparse_simplex(10, 3, s),
    lambda s: gen_l0_instance(8, 3, 0.05, s),
]


@pytest.mark.parametrize("gen", GENERATORS)
def test_ground_truth_feasible(gen):
    inst = gen(0)
    p = inst.dual_problem
    assert np.linalg.norm(p.map.apply(inst.ground_truth) - p.b) <= 1e-12 * (1 + p.bnorm)


@pytest.mark.parametrize("gen", GENERATORS)
def test_generators_deterministic(gen):
    assert gen(7).to_json() == gen(7).to_json()
    assert gen(7).to_json() != gen(8).to_json()


@pytest.mark.parametrize("gen", GENERATORS)
def test_json_round_trip(gen):
    inst = gen(1)
    back = Instance.from_json(inst.to_json())
    p, q = inst.dual_problem, back.dual_problem
    assert_array_equal(p.z, q.z)
    assert_array_equal(p.b, q.b)
    assert_array_equal(inst.ground_truth, back.ground_truth)
    assert back.metadata == inst.metadata
    y = rng.standard_normal(p.m)
    assert p.value_and_grad(y).value == q.value_and_grad(y).value
    assert back.to_json() == inst.to_json()
    assert PRNG_VERSION in inst.to_json()


def test_rng_streams_independent():
    a = rng_stream(0, 1).standard_normal(4)
    assert_array_equal(a, rng_stream(0, 1).standard_normal(4))
    assert not np.array_equal(a, rng_stream(0, 2).standard_normal(4))
    assert not np.array_equal(a, rng_stream(1, 1).standard_normal(4))


# ---------------------------------------------------------------------------
# low-rank


def test_lowrank_full_rank_diag_correction():
    inst = gen_lowrank_diag(6, 6, 0)
    p = inst.dual_problem
    y = np.diag(inst.ground_truth) - np.diag(p.z)
    g = p.value_and_grad(y).grad
    assert_allclose(g, 0.0, atol=1e-12)
    assert solve_ssn(p).converged


def _altproj_from(p, x, iters=300):
    for _ in range(iters):
        x = p.prox(p.project_affine(x)).point
    return p.project_affine(x)


def test_lowrank_small_multistart_never_beats_dual():
    inst = gen_lowrank_diag(8, 2, 0)
    p = inst.dual_problem
    rep = solve_ssn(p, SolveOptions(tol=1e-12))
    fdual = p.objective(rep.x)
    best = np.inf
    for _ in range(200):
        x = _altproj_from(p, p.z + rng.standard_normal(p.z.shape) * 3, iters=60)
        x = p.prox(x).point
        if residuals(p, x).feas <= 1e-6:
            best = min(best, p.objective(x))
    assert np.isfinite(best)
    assert fdual <= best + 1e-8


# ---------------------------------------------------------------------------
# EDM


def test_edm_noiseless_is_fixed_point():
    inst = gen_edm_helix(30, 3, 0.0, 0)
    p = inst.dual_problem
    assert_allclose(p.z, inst.ground_truth, atol=1e-12)
    for s in DUAL_SOLVERS:
        rep = SOLVERS[s](p, SolveOptions())
        assert rep.converged and rep.iterations == 0


def test_edm_metadata_records_both_counts():
    md = gen_edm_helix(40, 3, 1e-2, 0).metadata
    assert md["m"] == 40 + md["omega_size"]


def test_edm_n50_dual_solvers_agree():
    p = gen_edm_helix(50, 3, 1e-2, 0).dual_problem
    xs = [SOLVERS[s](p, SolveOptions(tol=1e-8, iter_limit=3000)).x for s in DUAL_SOLVERS]
    for a, b in itertools.combinations(xs, 2):
        assert residuals(p, a, b).sol <= 1e-6


# ---------------------------------------------------------------------------
# SCAD


def test_scad_shapes_and_orthonormal_rows():
    inst = gen_scad(200, seed=0)
    A = inst.dual_problem.map.matrix
    assert A.shape == (20, 200)
    assert_allclose(A @ A.T, np.eye(20), atol=1e-12)
    assert np.count_nonzero(inst.ground_truth) == 10


def test_scad_vanishing_regularization():
    p = gen_scad(100, sigma=0.0, lam=1e-8, seed=0).dual_problem
    rep = solve_ssn(p, SolveOptions(tol=1e-10))
    assert rep.converged
    assert np.linalg.norm(rep.y) <= 1e-6


def test_scad_n100_certificate():
    p = gen_scad(100, lam=0.1, seed=0).dual_problem
    rep = solve_ssn(p, SolveOptions(tol=1e-12))
    assert rep.converged
    assert duality_gap_certificate(p, rep.x, rep.y) <= 1e-8


# ---------------------------------------------------------------------------
# sparse simplex


def test_sparse_simplex_examples():
    x, y = sparse_simplex_project(np.array([0.5, 0.3, 0.2]), 2)
    assert_allclose(x, [0.6, 0.4, 0.0], atol=1e-15)
    assert y == pytest.approx(0.1)
    xbf, _ = sparse_simplex_brute_force(np.array([0.5, 0.3, 0.2]), 2)
    assert_allclose(x, xbf, atol=1e-12)

    z = np.array([0.0, 0.7, 0.3, 0.0])
    x, y = sparse_simplex_project(z, 2)
    assert_allclose(x, z)
    assert y == 0.0

    x, y = sparse_simplex_project(np.array([-1.0, -1.0, -1.0]), 1)
    assert_array_equal(x, [1.0, 0.0, 0.0])
    assert y == 2.0
    _, dbf = sparse_simplex_brute_force(np.array([-1.0, -1.0, -1.0]), 1)
    assert np.linalg.norm(x + 1.0) == pytest.approx(dbf)


def test_sparse_simplex_against_enumeration():
    for _ in range(500):
        n = int(rng.integers(2, 9))
        k = int(rng.integers(1, min(3, n - 1) + 1))
        z = rng.standard_normal(n)
        x, y = sparse_simplex_project(z, k)
        assert abs(x.sum() - 1.0) <= 1e-14
        assert np.all(x >= 0) and np.count_nonzero(x) <= k
        _, dbf = sparse_simplex_brute_force(z, k)
        assert abs(np.linalg.norm(x - z) - dbf) <= 1e-10
        root = sparse_simplex_root_1d(z, k)
        assert root == pytest.approx(y, abs=1e-12)
        F = np.sum(np.maximum(np.sort(z)[::-1][:k] + root, 0.0)) - 1.0
        assert abs(F) <= 1e-12


def test_root_examples():
    assert sparse_simplex_root_1d(np.array([0.5, 0.3, 0.2]), 2) == pytest.approx(0.1, abs=1e-15)
    assert sparse_simplex_root_1d(np.array([0.0, 0.7, 0.3, 0.0]), 2) == pytest.approx(0.0, abs=1e-15)


def test_sparse_simplex_precondition():
    with pytest.raises(ValueError):
        sparse_simplex_project(np.ones(3), 3)


def test_matrix_lift_examples():
    assert_allclose(sparse_simplex_matrix_project(np.diag([0.5, 0.3, 0.2]), 2), np.diag([0.6, 0.4, 0.0]), atol=1e-14)
    Q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    X = Q @ np.diag([0.5, 0.5, 0.0, 0.0]) @ Q.T
    assert_allclose(sparse_simplex_matrix_project(X, 2), X, atol=1e-12)
    d = rng.standard_normal(5)
    Q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    xd, _ = sparse_simplex_project(d, 2)
    out = sparse_simplex_matrix_project(Q @ np.diag(d) @ Q.T, 2)
    assert_allclose(out, Q @ np.diag(xd) @ Q.T, atol=1e-12)
    assert np.trace(out) == pytest.approx(1.0)
    assert np.linalg.eigvalsh(out)[0] >= -1e-12


# ---------------------------------------------------------------------------
# l0 regression


def test_l0_scalar_zero_branch():
    lam = 0.5
    tau = np.sqrt(2 * lam)
    b = np.array([0.6 * tau / (1 + lam)])
    res = l0_regression_dual_solve(DenseRows([[1.0]]), b, np.zeros(1), b, lam)
    assert res.converged
    assert_allclose(res.u, (1 + lam) * b)
    assert_array_equal(res.x, [0.0])
    # two-branch scalar enumeration: x=0 beats the keep branch
    assert l0_regression_objective(np.array([[1.0]]), b, np.zeros(1), b, lam, res.x) <= \
        l0_brute_force(np.array([[1.0]]), b, np.zeros(1), b, lam)[1] + 1e-15


def test_l0_full_support_single_solve():
    Q, _ = np.linalg.qr(rng.standard_normal((6, 2)))
    A = DenseRows(Q.T)
    lam = 0.02
    x0 = np.sign(rng.standard_normal(6)) * (5.0 + rng.random(6))
    b = rng.standard_normal(2) * 0.1
    res = l0_regression_dual_solve(A, b, x0, A.apply(x0), lam)
    assert res.converged and res.updates == 1
    v = x0 + A.adjoint(res.u)
    assert np.all(np.abs(v) > np.sqrt(2 * lam))


def test_l0_matches_exhaustive_support():
    for _ in range(200):
        n = int(rng.integers(3, 11))
        m = int(rng.integers(1, min(3, n - 1) + 1))
        lam = float(rng.uniform(0.02, 0.2))
        A, b, x0, y0 = gen_l0_regression(n, m, lam, int(rng.integers(2**31)))
        res = l0_regression_dual_solve(A, b, x0, y0, lam)
        xbf, best = l0_brute_force(A, b, x0, y0, lam)
        assert res.converged
        val = l0_regression_objective(A, b, x0, y0, lam, res.x)
        assert val == pytest.approx(best, rel=1e-10, abs=1e-12)


def test_composite_residual_examples():
    A, b, x0, y0 = gen_l0_regression(8, 3, 0.05, 4)
    f, g = l0_composite_operators(b, 0.05)
    res = l0_regression_dual_solve(A, b, x0, y0, 0.05)
    assert np.linalg.norm(composite_dual_residual(f, g, A, x0, y0, res.u)) <= 1e-10

    # fixed-point data: x0 survives thresholding and y0 = A x0 = b
    x0 = np.array([1.0, 0.0, -2.0, 0.0])
    A = DenseRows(rng.standard_normal((2, 4)))
    y0 = A.apply(x0)
    f, g = l0_composite_operators(y0, 0.1)
    assert_allclose(composite_dual_residual(f, g, A, x0, y0, np.zeros(2)), 0.0, atol=1e-14)


def test_composite_residual_affine_for_quadratics():
    A = DenseRows(rng.standard_normal((2, 5)))
    f = QuadraticShift(lam=0.5, b=rng.standard_normal(5))
    g = QuadraticShift(lam=2.0, b=rng.standard_normal(2))
    x0, y0 = rng.standard_normal(5), rng.standard_normal(2)
    r = lambda u: composite_dual_residual(f, g, A, x0, y0, u)
    u1, u2 = rng.standard_normal(2), rng.standard_normal(2)
    assert_allclose(r(0.3 * u1 + 0.7 * u2), 0.3 * r(u1) + 0.7 * r(u2), atol=1e-12)
    # root of the affine residual solved directly
    r0 = r(np.zeros(2))
    J = np.column_stack([r(e) - r0 for e in np.eye(2)])
    u = np.linalg.solve(J, -r0)
    assert_allclose(r(u), 0.0, atol=1e-12)


def test_l0_instance_dual_problem_matches_specialist():
    inst = gen_l0_instance(10, 3, 0.05, 2)
    p = inst.dual_problem
    rep = solve_ssn(p, SolveOptions(tol=1e-10))
    assert rep.converged
    assert residuals(p, rep.x, inst.reference_solution).sol <= 1e-8
