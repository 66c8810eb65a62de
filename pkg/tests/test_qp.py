import numpy as np
import pytest

from clfqp.qp import FEAS_TOL, QpProblem, QpSolution, QpStatus, solve_qp

from oracles import brute_force_qp


def random_qp(rng, d=5, n_eq=2, n_in=3, bounded=False):
    """Strictly convex random QP with a guaranteed-feasible interior point."""
    a = rng.standard_normal((d, d))
    h = a.T @ a + 0.5 * np.eye(d)
    f = rng.standard_normal(d)
    x_feas = rng.standard_normal(d)
    a_eq = rng.standard_normal((n_eq, d)) if n_eq else None
    b_eq = a_eq @ x_feas if n_eq else None
    a_in = rng.standard_normal((n_in, d)) if n_in else None
    b_in = a_in @ x_feas + rng.uniform(0.0, 1.0, n_in) if n_in else None
    lb = ub = None
    if bounded:
        lb = x_feas - rng.uniform(0.5, 2.0, d)
        ub = x_feas + rng.uniform(0.5, 2.0, d)
    return QpProblem(h, f, a_eq, b_eq, a_in, b_in, lb, ub)


class TestWorkedExamples:
    def test_active_bound(self):
        # min x^2 s.t. x >= 1
        sol = solve_qp(QpProblem(np.array([[2.0]]), np.zeros(1), lb=np.array([1.0])))
        assert sol.status is QpStatus.OPTIMAL
        assert np.allclose(sol.x_star, [1.0], atol=1e-9)

    def test_symmetric_equality(self):
        # min ||x||^2 s.t. x1 + x2 = 1
        sol = solve_qp(QpProblem(2.0 * np.eye(2), np.zeros(2),
                                 A_eq=np.array([[1.0, 1.0]]), b_eq=np.array([1.0])))
        assert sol.status is QpStatus.OPTIMAL
        assert np.allclose(sol.x_star, [0.5, 0.5], atol=1e-9)

    def test_unconstrained_stationary_point(self):
        # min 1/2 x' diag(2,2) x + (-2,-4)'x
        sol = solve_qp(QpProblem(np.diag([2.0, 2.0]), np.array([-2.0, -4.0])))
        assert sol.status is QpStatus.OPTIMAL
        assert np.allclose(sol.x_star, [1.0, 2.0], atol=1e-9)


class TestAnalyticSuite:
    """Hand-built problems whose solutions are known in closed form."""

    def test_box_projection(self):
        # Projection of (3, -3) onto [-1, 1]^2.
        sol = solve_qp(QpProblem(2.0 * np.eye(2), np.array([-6.0, 6.0]),
                                 lb=-np.ones(2), ub=np.ones(2)))
        assert np.allclose(sol.x_star, [1.0, -1.0], atol=1e-9)

    def test_single_inequality_active(self):
        # min (x-2)^2 s.t. x <= 1  ->  x = 1
        sol = solve_qp(QpProblem(np.array([[2.0]]), np.array([-4.0]),
                                 A_in=np.array([[1.0]]), b_in=np.array([1.0])))
        assert np.allclose(sol.x_star, [1.0], atol=1e-9)

    def test_single_inequality_inactive(self):
        # min (x-2)^2 s.t. x <= 5  ->  x = 2, multiplier-free
        sol = solve_qp(QpProblem(np.array([[2.0]]), np.array([-4.0]),
                                 A_in=np.array([[1.0]]), b_in=np.array([5.0])))
        assert np.allclose(sol.x_star, [2.0], atol=1e-9)
        assert sol.active_set == ()

    def test_equality_and_bound(self):
        # min ||x||^2 s.t. x1 + x2 = 4, x1 <= 1  ->  (1, 3)
        sol = solve_qp(QpProblem(2.0 * np.eye(2), np.zeros(2),
                                 A_eq=np.array([[1.0, 1.0]]), b_eq=np.array([4.0]),
                                 ub=np.array([1.0, np.inf])))
        assert np.allclose(sol.x_star, [1.0, 3.0], atol=1e-9)

    def test_weighted_distance_to_halfspace(self):
        # min (x1-1)^2 + 10 (x2-1)^2 s.t. x1 + x2 <= 0.
        # KKT: x = (1,1) - lam * (1/2, 1/20), lam from x1 + x2 = 0.
        h = np.diag([2.0, 20.0])
        f = np.array([-2.0, -20.0])
        lam = 2.0 / (0.5 + 0.05)
        expected = np.array([1.0 - lam / 2.0, 1.0 - lam / 20.0])
        sol = solve_qp(QpProblem(h, f, A_in=np.array([[1.0, 1.0]]), b_in=np.array([0.0])))
        assert np.allclose(sol.x_star, expected, atol=1e-9)

    def test_two_active_inequalities(self):
        # min ||x - (2,2)||^2 s.t. x1 <= 1, x2 <= 1 -> (1,1)
        sol = solve_qp(QpProblem(2.0 * np.eye(2), np.array([-4.0, -4.0]),
                                 A_in=np.eye(2), b_in=np.ones(2)))
        assert np.allclose(sol.x_star, [1.0, 1.0], atol=1e-9)

    def test_redundant_active_constraints(self):
        # x <= 1 given twice; solution on the bound, no cycling.
        sol = solve_qp(QpProblem(np.array([[2.0]]), np.array([-4.0]),
                                 A_in=np.array([[1.0], [1.0]]), b_in=np.array([1.0, 1.0])))
        assert np.allclose(sol.x_star, [1.0], atol=1e-9)
        assert sol.status is QpStatus.OPTIMAL


class TestInfeasibility:
    def test_contradictory_inequalities(self):
        prob = QpProblem(np.array([[2.0]]), np.zeros(1),
                         A_in=np.array([[1.0], [-1.0]]), b_in=np.array([-1.0, -1.0]))
        assert solve_qp(prob).status is QpStatus.INFEASIBLE

    def test_equality_conflicts_with_bounds(self):
        prob = QpProblem(2.0 * np.eye(2), np.zeros(2),
                         A_eq=np.array([[1.0, 1.0]]), b_eq=np.array([10.0]),
                         ub=np.array([1.0, 1.0]))
        assert solve_qp(prob).status is QpStatus.INFEASIBLE

    def test_inconsistent_equalities(self):
        prob = QpProblem(2.0 * np.eye(2), np.zeros(2),
                         A_eq=np.array([[1.0, 0.0], [1.0, 0.0]]), b_eq=np.array([0.0, 1.0]))
        assert solve_qp(prob).status is QpStatus.INFEASIBLE

    def test_fully_pinned_infeasible(self):
        prob = QpProblem(2.0 * np.eye(2), np.zeros(2),
                         A_eq=np.eye(2), b_eq=np.array([2.0, 2.0]),
                         ub=np.ones(2))
        assert solve_qp(prob).status is QpStatus.INFEASIBLE


class TestValidation:
    def test_asymmetric_h_rejected(self):
        with pytest.raises(ValueError):
            QpProblem(np.array([[1.0, 0.5], [0.0, 1.0]]), np.zeros(2))

    def test_indefinite_h_rejected(self):
        with pytest.raises(ValueError):
            QpProblem(np.diag([1.0, -1.0]), np.zeros(2))

    def test_crossed_bounds_rejected(self):
        with pytest.raises(ValueError):
            QpProblem(np.eye(1), np.zeros(1), lb=np.array([2.0]), ub=np.array([1.0]))


class TestAgainstEnumerationOracle:
    def test_random_qps_match_brute_force(self):
        rng = np.random.default_rng(42)
        for trial in range(200):
            prob = random_qp(rng, d=5, n_eq=2, n_in=3, bounded=bool(trial % 2))
            sol = solve_qp(prob)
            assert sol.status is QpStatus.OPTIMAL, f"trial {trial}: {sol.status}"
            ref = brute_force_qp(prob.H, prob.f, prob.A_eq, prob.b_eq,
                                 prob.A_in, prob.b_in, prob.lb, prob.ub)
            assert ref is not None
            assert np.max(np.abs(sol.x_star - ref)) < 1e-6, f"trial {trial}"
            assert sol.kkt_residual < 1e-6


class TestSolutionQuality:
    def test_kkt_residual_small_when_optimal(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            sol = solve_qp(random_qp(rng, bounded=True))
            assert sol.status is QpStatus.OPTIMAL
            assert sol.kkt_residual <= 1e-6

    def test_local_optimality_probe(self):
        # Feasible perturbations of size 1e-3 never improve the objective
        # by more than 1e-9.
        rng = np.random.default_rng(99)
        for _ in range(20):
            prob = random_qp(rng, d=4, n_eq=1, n_in=2, bounded=True)
            sol = solve_qp(prob)
            assert sol.status is QpStatus.OPTIMAL
            base = prob.objective(sol.x_star)
            tried = 0
            while tried < 100:
                step = rng.standard_normal(prob.dim)
                if prob.A_eq.shape[0]:
                    # stay on the equality manifold
                    step -= prob.A_eq.T @ np.linalg.lstsq(
                        prob.A_eq @ prob.A_eq.T, prob.A_eq @ step, rcond=None)[0]
                cand = sol.x_star + 1e-3 * step / max(np.linalg.norm(step), 1e-12)
                if (np.all(prob.A_in @ cand - prob.b_in <= 1e-12)
                        and np.all(cand >= prob.lb - 1e-12)
                        and np.all(cand <= prob.ub + 1e-12)):
                    tried += 1
                    assert prob.objective(cand) >= base - 1e-9

    def test_deterministic_resolve(self):
        rng = np.random.default_rng(1)
        prob = random_qp(rng, bounded=True)
        a = solve_qp(prob)
        b = solve_qp(prob)
        assert np.array_equal(a.x_star, b.x_star)
        assert a.iterations == b.iterations

    def test_warm_start_reaches_same_solution(self):
        rng = np.random.default_rng(12)
        prob = random_qp(rng, d=6, n_eq=2, n_in=4, bounded=True)
        cold = solve_qp(prob)
        warm = solve_qp(prob, warm_start=cold.active_set)
        assert np.max(np.abs(cold.x_star - warm.x_star)) < 1e-9
        assert warm.iterations <= cold.iterations

    def test_max_iter_reports_best_iterate(self):
        rng = np.random.default_rng(2)
        prob = random_qp(rng, d=6, n_eq=0, n_in=8, bounded=True)
        sol = solve_qp(prob, max_iter=1)
        assert sol.status in (QpStatus.MAX_ITER, QpStatus.OPTIMAL)
        assert isinstance(sol, QpSolution)
        assert sol.x_star.shape == (6,)

    def test_constraints_satisfied_at_optimum(self):
        rng = np.random.default_rng(77)
        for _ in range(50):
            prob = random_qp(rng, bounded=True)
            sol = solve_qp(prob)
            assert sol.status is QpStatus.OPTIMAL
            assert np.max(prob.A_eq @ sol.x_star - prob.b_eq, initial=0.0) < 1e-6
            assert np.max(prob.A_in @ sol.x_star - prob.b_in, initial=0.0) < 1e-6
            assert np.all(sol.x_star >= prob.lb - 1e-6)
            assert np.all(sol.x_star <= prob.ub + 1e-6)
