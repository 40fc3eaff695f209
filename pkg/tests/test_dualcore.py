import numpy as np
import pytest
from numpy.testing import assert_allclose

from proxdual.dualcore import (
    DomainError,
    DualProblem,
    NotSurjectiveError,
    dual_gradient,
    dual_value,
    duality_gap_certificate,
    fd_gradient_check,
    recover_primal,
    residuals,
)
from proxdual.linmap import DenseRows, DimensionError, SingleSum
from proxdual.problems import gen_edm_helix, gen_lowrank_diag, gen_scad, gen_sparse_simplex
from proxdual.proxlib import (
    HardThreshold,
    Nonnegative,
    PositivePartTopK,
    QuadraticShift,
    Scad,
)
from proxdual.solvers import SolveOptions, solve_ssn

rng = np.random.default_rng(2)


def nonneg_sum_problem(z=(0.5, -0.2, 0.4)):
    return DualProblem(Nonnegative(), SingleSum(3), [1.0], np.array(z))


def simplex_problem():
    return DualProblem(PositivePartTopK(k=2), SingleSum(3), [1.0], np.array([0.5, 0.3, 0.2]))


def test_value_projection_feasible_center_is_zero():
    p = nonneg_sum_problem((0.2, 0.3, 0.5))
    assert dual_value(p, [0.0]) == pytest.approx(0.0, abs=1e-15)


def test_value_nonnegative_example():
    assert dual_value(nonneg_sum_problem(), [0.0]) == pytest.approx(-0.02, abs=1e-15)


def test_value_at_zero_is_minus_envelope_plus_constants():
    p = DualProblem(Scad(lam=0.4), DenseRows(rng.standard_normal((2, 5))), rng.standard_normal(2),
                    rng.standard_normal(5))
    E = p.prox(p.z).envelope
    zz = 0.5 * float(p.z @ p.z)
    assert dual_value(p, np.zeros(2)) == pytest.approx(zz - E - zz, abs=1e-14)


def test_projection_form_agrees():
    """For set projections Phi equals -<b,y> - |z|^2/2 + |z+A*y|^2/2 - dist^2/2."""
    for _ in range(50):
        z = rng.standard_normal(6)
        A = DenseRows(rng.standard_normal((2, 6)))
        b = rng.standard_normal(2)
        y = rng.standard_normal(2)
        for op in (Nonnegative(), PositivePartTopK(k=3)):
            p = DualProblem(op, A, b, z)
            v = z + A.adjoint(y)
            dist2 = float(np.sum((op(v).point - v) ** 2))
            alt = -float(b @ y) - 0.5 * float(z @ z) + 0.5 * float(v @ v) - 0.5 * dist2
            assert dual_value(p, y) == pytest.approx(alt, rel=1e-12, abs=1e-12)


def test_gradient_examples():
    p = nonneg_sum_problem((0.2, 0.3, 0.5))
    g, x = dual_gradient(p, [0.0])
    assert_allclose(g, [0.0], atol=1e-15)
    assert_allclose(x, p.z)

    g, x = dual_gradient(nonneg_sum_problem(), [0.0])
    assert_allclose(g, [-0.1], atol=1e-15)
    assert_allclose(x, [0.5, 0.0, 0.4])

    g, x = dual_gradient(simplex_problem(), [0.1])
    assert_allclose(g, [0.0], atol=1e-15)
    assert_allclose(x, [0.6, 0.4, 0.0], atol=1e-15)


def test_recover_primal_examples():
    assert_allclose(recover_primal(nonneg_sum_problem((0.2, 0.3, 0.5)), [0.0]), [0.2, 0.3, 0.5])
    assert_allclose(recover_primal(nonneg_sum_problem(), [0.0]), [0.5, 0.0, 0.4])
    assert_allclose(recover_primal(simplex_problem(), [0.1]), [0.6, 0.4, 0.0], atol=1e-15)


def test_residual_examples():
    p = DualProblem(Nonnegative(), SingleSum(2), [1.0], np.zeros(2))
    x = np.array([0.6, 0.6])
    assert residuals(p, x).feas == pytest.approx(0.1)
    assert residuals(p, x).obj is None
    r = residuals(p, x, x)
    assert r.obj == 0.0 and r.sol == 0.0
    assert residuals(p, np.array([0.5, 0.5])).feas == 0.0


def test_certificate_examples():
    p = nonneg_sum_problem((0.2, 0.3, 0.5))
    assert duality_gap_certificate(p, p.z, [0.0]) == pytest.approx(0.0, abs=1e-15)
    q = simplex_problem()
    assert duality_gap_certificate(q, np.array([0.6, 0.4, 0.0]), [0.1]) <= 1e-12
    x = np.array([2.0, 3.0, 1.0])
    assert duality_gap_certificate(nonneg_sum_problem(), x, [0.0]) > 0


def test_certificate_outside_domain_raises():
    with pytest.raises(DomainError):
        duality_gap_certificate(nonneg_sum_problem(), np.array([-1.0, 1.0, 1.0]), [0.0])


def test_fd_check_examples():
    qp = DualProblem(QuadraticShift(lam=0.7, b=rng.standard_normal(5)), DenseRows(rng.standard_normal((2, 5))),
                     rng.standard_normal(2), rng.standard_normal(5))
    chk = fd_gradient_check(qp, rng.standard_normal(2), 1e-6)
    assert not chk.inconclusive and chk.error <= 1e-6

    sc = gen_scad(40, lam=0.3, seed=1).dual_problem
    chk = fd_gradient_check(sc, 0.3 * rng.standard_normal(sc.m), 1e-7)
    assert not chk.inconclusive and chk.error <= 1e-5

    # y places v_0 exactly on the threshold tau = 1
    hp = DualProblem(HardThreshold(lam=0.5), DenseRows(np.eye(2)), np.zeros(2), np.zeros(2))
    assert fd_gradient_check(hp, np.array([1.0, 0.2]), 1e-6).inconclusive


def test_surjectivity_and_shapes_checked():
    with pytest.raises(NotSurjectiveError):
        DualProblem(Nonnegative(), DenseRows(np.ones((2, 3))), np.ones(2), np.zeros(3))
    with pytest.raises(DimensionError):
        DualProblem(Nonnegative(), SingleSum(3), np.ones(2), np.zeros(3))
    with pytest.raises(DimensionError):
        DualProblem(Nonnegative(), SingleSum(3), np.ones(1), np.zeros(4))


def test_affine_projection():
    p = gen_scad(60, seed=3).dual_problem
    x = rng.standard_normal(60)
    px = p.project_affine(x)
    assert p.feasibility(px) <= 1e-14
    # the correction lies in range(A^*)
    d = x - px
    assert_allclose(p.map.adjoint(p.solve_gram(p.map.apply(d))), d, atol=1e-12)


CONVEX = [
    lambda: DualProblem(Nonnegative(), DenseRows(rng.standard_normal((3, 6))), rng.standard_normal(3),
                        rng.standard_normal(6)),
    lambda: DualProblem(QuadraticShift(lam=1.3, b=rng.standard_normal(6)), DenseRows(rng.standard_normal((3, 6))),
                        rng.standard_normal(3), rng.standard_normal(6)),
]


@pytest.mark.parametrize("make", CONVEX)
def test_convex_kinds_midpoint_convexity_and_monotonicity(make):
    p = make()
    for _ in range(200):
        y1, y2 = rng.standard_normal(3) * 2, rng.standard_normal(3) * 2
        a = rng.uniform(0, 1)
        lhs = dual_value(p, a * y1 + (1 - a) * y2)
        assert lhs <= a * dual_value(p, y1) + (1 - a) * dual_value(p, y2) + 1e-10
        g1, _ = dual_gradient(p, y1)
        g2, _ = dual_gradient(p, y2)
        assert float((g1 - g2) @ (y1 - y2)) >= -1e-10


ALL = [
    lambda: gen_lowrank_diag(8, 2, 0).dual_problem,
    lambda: gen_edm_helix(10, 3, 1e-2, 0).dual_problem,
    lambda: gen_scad(40, lam=0.5, seed=0).dual_problem,
    lambda: gen_sparse_simplex(8, 3, 0).dual_problem,
    lambda: DualProblem(HardThreshold(lam=0.2), DenseRows(rng.standard_normal((3, 8))), rng.standard_normal(3),
                        rng.standard_normal(8)),
]


@pytest.mark.parametrize("make", ALL)
def test_subgradient_inequality_all_kinds(make):
    p = make()
    for _ in range(200):
        y, yp = rng.standard_normal(p.m), rng.standard_normal(p.m) * 2
        g, _ = dual_gradient(p, y)
        assert dual_value(p, yp) >= dual_value(p, y) + float(g @ (yp - y)) - 1e-8


@pytest.mark.parametrize("make", ALL[:4])
def test_certificate_sound_at_solution(make):
    p = make()
    rep = solve_ssn(p, SolveOptions(tol=1e-11, iter_limit=300))
    assert rep.converged
    assert p.prox.in_domain(rep.x)
    assert duality_gap_certificate(p, rep.x, rep.y) <= 1e-8


def test_strong_convexity_probe_small():
    p = gen_lowrank_diag(20, 3, 4).dual_problem
    rep = solve_ssn(p, SolveOptions(tol=1e-12))
    h = 1e-6 * (1 + np.linalg.norm(rep.y))
    H = np.column_stack([(dual_gradient(p, rep.y + h * e)[0] - dual_gradient(p, rep.y - h * e)[0]) / (2 * h)
                         for e in np.eye(p.m)])
    w = np.linalg.eigvalsh(0.5 * (H + H.T))
    assert w[0] > 1e-8 * w[-1] > 0
