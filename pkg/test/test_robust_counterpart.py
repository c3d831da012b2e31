"""
Tests for the budget worst case, membership and feasibility margins
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from robust_allocation.config import DEMO_REPORTED_OPTIMUM
from robust_allocation.errors import BudgetRangeError
from robust_allocation.problem_model import (
    CommGraph,
    LocalSet,
    ObjectiveSpec,
    RobustAllocationProblem,
    UncertainConstraintData,
    demo_problem,
)
from robust_allocation.robust_counterpart import (
    aggregated_margin,
    dual_feasibility_eval,
    robust_primal_eval,
    uncertainty_membership,
    worst_case_bruteforce,
    worst_case_greedy,
)


def _problem(A, Ahat, b, gamma):
    A = np.asarray(A, dtype=float)
    n, _, q = A.shape
    return RobustAllocationProblem(
        graph=CommGraph.path(n),
        constraints=UncertainConstraintData(A=A, Ahat=Ahat, b=b, gamma=gamma),
        sets=tuple(LocalSet.whole(q) for _ in range(n)),
        objectives=tuple(ObjectiveSpec("quadratic", np.zeros(q)) for _ in range(n)),
    )


class TestWorstCase:
    def test_top_two(self):
        result = worst_case_greedy([1.0, 2.0, 3.0], [1.0, 1.0, 1.0], 2)
        assert result.value == 5.0
        assert result.chosen_set == (1, 2)

    def test_zero_budget(self):
        result = worst_case_greedy([4.0, 1.0], [3.0, -2.0], 0)
        assert result.value == 0.0
        assert result.chosen_set == ()

    def test_negative_decision_not_chosen(self):
        result = worst_case_greedy([1.0, 2.0], [-1.0, 3.0], 1)
        assert result.value == 6.0
        assert result.chosen_set == (1,)

    def test_ties_go_to_lowest_index(self):
        assert worst_case_greedy([1.0, 1.0, 1.0], [2.0, 2.0, 2.0], 2).chosen_set == (0, 1)

    def test_bruteforce_examples(self):
        assert worst_case_bruteforce([1.0, 2.0, 3.0], [1.0, 1.0, 1.0], 2).value == 5.0
        assert worst_case_bruteforce([0.0, 0.0], [3.0, -7.0], 1).value == 0.0

    def test_full_budget_sums_everything(self):
        ahat = np.array([0.3, 0.1, 0.7])
        x = np.array([-2.0, 5.0, 1.5])
        assert worst_case_bruteforce(ahat, x, 3).value == pytest.approx(float(ahat @ x))
        assert worst_case_greedy(ahat, x, 3).value == pytest.approx(float(ahat @ x))

    @pytest.mark.parametrize("gamma", [-1, 4, 1.5])
    def test_budget_out_of_range(self, gamma):
        with pytest.raises(BudgetRangeError):
            worst_case_greedy([1.0, 2.0, 3.0], [1.0, 1.0, 1.0], gamma)

    def test_enumeration_guard(self):
        with pytest.raises(BudgetRangeError):
            worst_case_bruteforce(np.ones(21), np.ones(21), 2)

    def test_greedy_equals_bruteforce(self):
        rng = np.random.default_rng(2024)
        for _ in range(500):
            n = int(rng.integers(1, 9))
            ahat = rng.uniform(0.0, 2.0, size=n)
            x = rng.normal(scale=5.0, size=n)
            if rng.random() < 0.2:
                # force ties
                x = np.round(x)
                ahat = np.round(ahat)
            gamma = int(rng.integers(0, n + 1))
            assert worst_case_greedy(ahat, x, gamma).value == worst_case_bruteforce(ahat, x, gamma).value


class TestMembership:
    def test_nominal_always_member(self):
        assert uncertainty_membership([1.0, 2.0], [1.0, 2.0], [0.5, 0.5], 0)

    def test_interval_violation(self):
        assert not uncertainty_membership([2.0], [1.0], [0.5], 1)

    def test_budget_counts_scaled_deviations(self):
        abar = [1.5, 2.5]
        assert uncertainty_membership(abar, [1.0, 2.0], [0.5, 0.5], 2)
        assert not uncertainty_membership(abar, [1.0, 2.0], [0.5, 0.5], 1)

    def test_fixed_entry_must_match(self):
        assert not uncertainty_membership([1.1, 2.0], [1.0, 2.0], [0.0, 0.5], 2)

    def test_worst_case_dominates_admissible_realizations(self):
        rng = np.random.default_rng(7)
        for _ in range(500):
            n = int(rng.integers(1, 7))
            a = rng.uniform(-1.0, 1.0, size=n)
            ahat = rng.uniform(0.0, 1.0, size=n)
            x = rng.uniform(0.0, 5.0, size=n)
            gamma = int(rng.integers(0, n + 1))
            # random direction, scaled into the budget
            scaled = rng.uniform(-1.0, 1.0, size=n)
            total = np.abs(scaled).sum()
            if total > gamma:
                scaled *= gamma / total
            abar = a + scaled * ahat
            assert uncertainty_membership(abar, a, ahat, gamma)
            assert abar @ x <= a @ x + worst_case_greedy(ahat, x, gamma).value + 1e-9


class TestRobustPrimal:
    def test_single_agent_formula(self):
        problem = _problem([[[1.0]]], [[[1.0]]], [[[0.0]]], (1,))
        assert_array_equal(robust_primal_eval(problem, [[2.0]]), [[4.0]])

    def test_zero_data(self):
        zeros = np.zeros((3, 2, 2))
        problem = _problem(zeros, zeros, zeros, (1, 2))
        assert_array_equal(robust_primal_eval(problem, np.ones((3, 2)) * 5.0), np.zeros((2, 2)))

    def test_accepts_stacked_vector(self):
        demo = demo_problem()
        x = np.array(DEMO_REPORTED_OPTIMUM)
        assert_array_equal(robust_primal_eval(demo, x.ravel()), robust_primal_eval(demo, x))

    def test_reported_demo_optimum_violates_first_resource(self):
        margins = robust_primal_eval(demo_problem(), np.array(DEMO_REPORTED_OPTIMUM))
        assert margins[0, 0] > 6.0

    def test_exact_worst_case_below_aggregated_margin_for_negative_decisions(self):
        demo = demo_problem()
        x = -np.abs(np.random.default_rng(5).normal(scale=10.0, size=(4, 2)))
        assert np.all(robust_primal_eval(demo, x) <= aggregated_margin(demo, x) + 1e-9)


class TestDualFeasibility:
    def test_origin_with_positive_shares(self):
        b = np.full((3, 1, 2), 2.0)
        problem = _problem(np.ones((3, 1, 2)), np.ones((3, 1, 2)), b, (1,))
        zeros = np.zeros((3, 1, 2))
        margins = dual_feasibility_eval(problem, np.zeros((3, 2)), zeros, zeros)
        assert_array_equal(margins.G1, [[-6.0, -6.0]])
        assert_array_equal(margins.G2, [[0.0, 0.0]])
        assert margins.dual_feasible

    def test_shared_z_has_no_disagreement(self):
        demo = demo_problem()
        Z = np.broadcast_to(np.array([[1.0, 2.0], [3.0, 4.0]]), (4, 2, 2))
        margins = dual_feasibility_eval(demo, np.zeros((4, 2)), Z, np.zeros((4, 2, 2)))
        assert margins.consensus_z == 0.0

    def test_dual_feasible_tuples_are_robustly_feasible(self):
        rng = np.random.default_rng(99)
        for _ in range(200):
            n = int(rng.integers(1, 5))
            m = int(rng.integers(1, 3))
            q = int(rng.integers(1, 3))
            A = rng.uniform(-1.0, 1.0, size=(n, m, q))
            Ahat = rng.uniform(0.0, 1.0, size=(n, m, q))
            gamma = tuple(int(g) for g in rng.integers(0, n + 1, size=m))
            x = rng.normal(scale=3.0, size=(n, q))
            z = rng.uniform(0.0, 2.0, size=(m, q))
            # per-agent deviation constraints: ahat x <= z + w
            W = np.maximum(Ahat * x[:, None, :] - z, 0.0) + rng.uniform(0.0, 0.5, size=(n, m, q))
            Z = np.broadcast_to(z, (n, m, q)).copy()
            slack = rng.uniform(0.0, 1.0, size=(m, q))
            b_total = (A * x[:, None, :]).sum(axis=0) + np.array(gamma)[:, None] * z + W.sum(axis=0) + slack
            problem = _problem(A, Ahat, np.broadcast_to(b_total / n, (n, m, q)).copy(), gamma)

            margins = dual_feasibility_eval(problem, x, Z, W)
            assert np.all(margins.G1 <= 1e-9)
            assert np.all(margins.G2 <= 1e-9)
            assert margins.consensus_z <= 1e-12
            assert np.all(margins.robust_primal <= 1e-9)

    def test_negative_inputs_only_warn(self):
        demo = demo_problem()
        Z = -np.ones((4, 2, 2))
        margins = dual_feasibility_eval(demo, np.zeros((4, 2)), Z, np.zeros((4, 2, 2)))
        assert_allclose(margins.G2, 4.0)
