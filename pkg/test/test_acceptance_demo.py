"""
End-to-end checks on the demo instance: convergence, feasibility, KKT, consensus, Lyapunov
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from robust_allocation.certification import (
    consensus_residuals,
    equilibrium_residual,
    kkt_residuals,
    lyapunov_lower_bound,
    lyapunov_value,
    slackness_series,
)
from robust_allocation.config import CONSENSUS_TOLERANCE, MARGIN_TOLERANCE
from robust_allocation.dynamics_engine import IntegratorConfig, step_halving_study
from robust_allocation.reference_oracle import cross_validate
from robust_allocation.robust_counterpart import dual_feasibility_eval, robust_primal_eval, worst_case_bruteforce

from instances import DEMO_OPTIMUM, DEMO_RUN_DT, DEMO_RUN_T_END

pytestmark = pytest.mark.slow


def test_final_decision_matches_oracle(demo, demo_run, demo_oracle):
    report = cross_validate(demo_run.final_state, demo_oracle, 0.02, problem=demo)
    assert report.passed, f"gap {report.max_gap:.4f} at agent {report.worst_agent + 1}"
    assert abs(report.objective_gap) < 0.1
    assert_allclose(demo_run.final_state.x, DEMO_OPTIMUM, atol=0.02)


def test_constraints_hold_at_final_snapshot(demo, demo_run):
    final = demo_run.final_state
    margins = dual_feasibility_eval(demo, final.x, final.Z, final.W)
    assert np.all(margins.G1 <= MARGIN_TOLERANCE)
    assert np.all(margins.G2 <= MARGIN_TOLERANCE)
    assert np.all(margins.robust_primal <= MARGIN_TOLERANCE)

    data = demo.constraints
    for j in range(demo.m):
        for l in range(demo.q):
            exact = worst_case_bruteforce(data.Ahat[:, j, l], final.x[:, l], data.gamma[j]).value
            nominal = float(data.A[:, j, l] @ final.x[:, l])
            assert nominal + exact - data.b_total[j, l] == pytest.approx(robust_primal_eval(demo, final.x)[j, l], abs=1e-12)


def test_final_state_certifies(demo, demo_run):
    final = demo_run.final_state
    residuals = kkt_residuals(demo, final)
    assert residuals.flagged(1e-2) == []
    assert equilibrium_residual(demo, final) <= 1e-2


def test_consensus_at_final_snapshot(demo, demo_run):
    assert all(value <= CONSENSUS_TOLERANCE for value in consensus_residuals(demo, demo_run.final_state))


def test_lyapunov_per_step_increase_is_second_order(demo_run):
    # V decreases at every step until the l1 sign of agent 2 starts to chatter at its kink;
    # from then on a single step can raise V only by O(dt^2)
    steps = demo_run.step_lyapunov
    assert steps.reference_label == "supplied"
    assert steps.values.shape == (round(DEMO_RUN_T_END / DEMO_RUN_DT) + 1,)
    early = steps.times <= 1000.0
    assert np.max(np.diff(steps.values[early])) < 0.0
    assert steps.max_increment() <= DEMO_RUN_DT ** 2


def test_lyapunov_lower_bound_along_run(demo_run):
    reference = demo_run.final_state
    for state in demo_run.states[::10]:
        assert lyapunov_value(state, reference).sum() >= lyapunov_lower_bound(state, reference) - 1e-9


def test_slackness_tail(demo, demo_run):
    series = slackness_series(demo, demo_run)
    tail = series[int(0.9 * len(series)):]
    assert np.all(np.diff(tail, axis=0) <= 1e-3)
    assert np.all(tail[-1] <= 1e-2)


def test_step_halving_shrinks_lyapunov_increase(demo, demo_run, demo_reference):
    report = step_halving_study(demo, demo_run.final_state, IntegratorConfig(DEMO_RUN_DT, 200.0, 1000), demo_reference)
    assert report.worst_increment > 0.0
    assert report.worst_increment_half <= 0.5 * report.worst_increment
    assert report.final_x_gap < 0.02


def test_boundedness(demo_run):
    norms = demo_run.block_sup_norms()
    assert all(np.isfinite(value) for value in norms.values())
    assert norms["x"] <= 60.0
