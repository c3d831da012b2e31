"""
Robust Counterpart Module
Budget-of-uncertainty worst cases, uncertainty-set membership and feasibility margins
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np
from absl import logging

from robust_allocation.config import BRUTEFORCE_MAX_AGENTS, MEMBERSHIP_TOLERANCE
from robust_allocation.errors import BudgetRangeError


@dataclass(frozen=True)
class WorstCaseResult:
    """Worst-case augmentation and the maximizing agent subset (0-indexed, sorted)."""

    value: float
    chosen_set: tuple


@dataclass(frozen=True, eq=False)
class FeasibilityMargins:
    """
    Aggregated constraint margins at a point.

    G1, G2 and robust_primal are (m, q) arrays; nonpositive entries mean satisfied.
    consensus_z is ||L Z|| over all blocks.
    """

    G1: np.ndarray
    G2: np.ndarray
    robust_primal: np.ndarray
    consensus_z: float

    @property
    def dual_feasible(self):
        return bool(np.all(self.G1 <= 0) and np.all(self.G2 <= 0))


def _products(ahat_col, x_col, gamma):
    products = np.asarray(ahat_col, dtype=float) * np.asarray(x_col, dtype=float)
    n = products.shape[0]
    if isinstance(gamma, bool) or int(gamma) != gamma or not 0 <= gamma <= n:
        raise BudgetRangeError(f"budget {gamma} outside [0, {n}]")
    return products, int(gamma)


def worst_case_greedy(ahat_col, x_col, gamma):
    """
    Exact budget worst case by sorting.

    Args:
        ahat_col: Deviations of one (j, l) coordinate, one per agent
        x_col: Decisions of that coordinate, one per agent
        gamma: Exact subset size, 0 <= gamma <= n

    Returns:
        WorstCaseResult summing the gamma largest products (ties to the lowest index)
    """
    products, gamma = _products(ahat_col, x_col, gamma)
    order = np.argsort(-products, kind="stable")
    chosen = tuple(sorted(int(i) for i in order[:gamma]))
    # fsum is correctly rounded, so greedy and enumeration agree bit for bit
    return WorstCaseResult(math.fsum(products[list(chosen)]), chosen)


def worst_case_bruteforce(ahat_col, x_col, gamma):
    """Enumerate every size-gamma subset; reference for worst_case_greedy."""
    products, gamma = _products(ahat_col, x_col, gamma)
    n = products.shape[0]
    if n > BRUTEFORCE_MAX_AGENTS:
        raise BudgetRangeError(f"enumeration limited to {BRUTEFORCE_MAX_AGENTS} agents, got {n}")
    best = None
    for subset in itertools.combinations(range(n), gamma):
        value = math.fsum(products[list(subset)])
        if best is None or value > best.value:
            best = WorstCaseResult(value, subset)
    return best


def uncertainty_membership(abar, a, ahat, gamma_j):
    """
    Check that a realization lies in the budget uncertainty set.

    Entries with ahat = 0 must match the nominal value and do not count toward the budget.
    """
    deviation = np.abs(np.asarray(abar, dtype=float) - np.asarray(a, dtype=float))
    ahat = np.asarray(ahat, dtype=float)
    fixed = ahat <= 0
    if np.any(deviation[fixed] > MEMBERSHIP_TOLERANCE):
        return False
    free_dev = deviation[~fixed]
    free_hat = ahat[~fixed]
    if np.any(free_dev > free_hat * (1.0 + MEMBERSHIP_TOLERANCE)):
        return False
    return bool(np.sum(free_dev / free_hat) <= gamma_j + MEMBERSHIP_TOLERANCE)


def _as_agent_rows(problem, x):
    return np.asarray(x, dtype=float).reshape(problem.n, problem.q)


def robust_primal_eval(problem, x):
    """
    Robust counterpart margins with the exact-cardinality worst case.

    Args:
        problem: RobustAllocationProblem
        x: Decisions, (n, q) or stacked nq

    Returns:
        (m, q) array of sum_i a x + worst case - b_j; <= 0 is robustly feasible
    """
    x = _as_agent_rows(problem, x)
    data = problem.constraints
    margins = np.zeros((problem.m, problem.q))
    for j in range(problem.m):
        for l in range(problem.q):
            nominal = math.fsum(data.A[:, j, l] * x[:, l])
            worst = worst_case_greedy(data.Ahat[:, j, l], x[:, l], data.gamma[j]).value
            margins[j, l] = nominal + worst - data.b_total[j, l]
    return margins


def aggregated_margin(problem, x):
    """
    Margins of the consensus-coupled constraint the dynamics enforce at equilibrium.

    sum_i a x + (gamma_j / n) * max(0, sum_i ahat x) - b_j, shape (m, q).
    """
    x = _as_agent_rows(problem, x)
    data = problem.constraints
    nominal = (data.A * x[:, None, :]).sum(axis=0)
    deviation = np.maximum((data.Ahat * x[:, None, :]).sum(axis=0), 0.0)
    return nominal + data.gamma_array[:, None] / problem.n * deviation - data.b_total


def coupling_terms(problem, x, Z, W):
    """Per-agent H1 and H2 blocks, each (n, m, q)."""
    x = _as_agent_rows(problem, x)
    data = problem.constraints
    scale = data.gamma_array[None, :, None] / problem.n
    H1 = data.A * x[:, None, :] + scale * Z + W - data.b
    H2 = data.Ahat * x[:, None, :] - Z - W
    return H1, H2


def dual_feasibility_eval(problem, x, Z, W):
    """
    Evaluate the dualized constraints at (x, Z, W).

    Args:
        problem: RobustAllocationProblem
        x: Decisions, (n, q) or stacked nq
        Z: Budget duals, (n, m, q)
        W: Deviation duals, (n, m, q)

    Returns:
        FeasibilityMargins
    """
    shape = (problem.n, problem.m, problem.q)
    Z = np.asarray(Z, dtype=float).reshape(shape)
    W = np.asarray(W, dtype=float).reshape(shape)
    if np.any(Z < 0) or np.any(W < 0):
        logging.warning("dual_feasibility_eval received negative Z or W entries")
    H1, H2 = coupling_terms(problem, x, Z, W)
    return FeasibilityMargins(
        G1=H1.sum(axis=0),
        G2=H2.sum(axis=0),
        robust_primal=robust_primal_eval(problem, x),
        consensus_z=float(np.linalg.norm(problem.laplacian.apply(Z))),
    )
