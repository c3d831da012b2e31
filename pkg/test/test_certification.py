"""
Tests for KKT residuals, equilibrium residuals, consensus and Lyapunov monitors
"""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from robust_allocation.certification import (
    KKTCandidate,
    LyapunovMonitor,
    LyapunovSeries,
    certify,
    compact_operators,
    consensus_residuals,
    kkt_residuals,
    lyapunov_lower_bound,
    lyapunov_series,
    lyapunov_value,
    slackness_series,
    verdict,
)
from robust_allocation.config import KINK_TOLERANCE
from robust_allocation.dynamics_engine import RAW_BLOCKS, IntegratorConfig, SwarmState, default_init, simulate
from robust_allocation.problem_model import LocalSet

from instances import single_agent


def _random_state(problem, seed, scale=3.0):
    rng = np.random.default_rng(seed)
    n, m, q = problem.n, problem.m, problem.q
    raw = {name: rng.normal(scale=scale, size=(n, q) if name == "x_bar" else (n, m, q)) for name in RAW_BLOCKS}
    return SwarmState.from_raw(problem, **raw)


def _with_blocks(problem, state, **blocks):
    raw = state.raw_blocks()
    raw.update(blocks)
    return SwarmState.from_raw(problem, **raw)


class TestKKTResiduals:
    def test_initial_demo_state_is_not_stationary(self, demo):
        residuals = kkt_residuals(demo, default_init(demo))
        assert residuals.x_stationarity > 0
        assert "x_stationarity" in residuals.flagged(1e-2)

    def test_zero_multipliers_on_slack_constraints_have_no_slackness(self, demo):
        zeros = np.zeros((4, 2, 2))
        residuals = kkt_residuals(demo, KKTCandidate(np.full((4, 2), -100.0), zeros, zeros, zeros, zeros, zeros))
        assert residuals.coupling_slackness == 0.0
        assert residuals.deviation_slackness == 0.0

    def test_unconstrained_minimum_is_kkt(self):
        problem = single_agent(p=(2.0, -3.0))
        empty = np.zeros((1, 0, 2))
        candidate = KKTCandidate(np.array([[2.0, -3.0]]), empty, empty, empty, empty, empty)
        residuals = kkt_residuals(problem, candidate)
        assert residuals.worst()[1] == 0.0

    def test_l1_kink_certifies(self):
        # minimum of (x - 0.3)^2 + |x| sits at the kink x = 0
        problem = single_agent(p=(0.3,), kind="quadratic_plus_l1")
        empty = np.zeros((1, 0, 1))
        candidate = KKTCandidate(np.array([[0.0]]), empty, empty, empty, empty, empty)
        assert kkt_residuals(problem, candidate).x_stationarity < 1e-12

    def test_kink_on_ball_boundary_certifies(self):
        # x* = (4, 0) is on the circle |x - (0, 3)| = 5 with x_2 at the l1 kink;
        # -(2 (x* - p) + (1, 0.5)) = 5 * (4, -3) / 5 lies in the normal cone
        ball = LocalSet.ball((0.0, 3.0), 5.0)
        problem = single_agent(p=(6.5, -1.25), kind="quadratic_plus_l1", local_set=ball)
        empty = np.zeros((1, 0, 2))
        candidate = KKTCandidate(np.array([[4.0, 0.0]]), empty, empty, empty, empty, empty)
        assert kkt_residuals(problem, candidate).x_stationarity < 1e-9

    def test_kink_on_ball_boundary_away_from_optimum_fails(self):
        ball = LocalSet.ball((0.0, 3.0), 5.0)
        problem = single_agent(p=(6.5, 4.0), kind="quadratic_plus_l1", local_set=ball)
        empty = np.zeros((1, 0, 2))
        candidate = KKTCandidate(np.array([[4.0, 0.0]]), empty, empty, empty, empty, empty)
        assert kkt_residuals(problem, candidate).x_stationarity > 0.1

    def test_near_kink_counts_as_kink(self):
        problem = single_agent(p=(0.3,), kind="quadratic_plus_l1")
        empty = np.zeros((1, 0, 1))
        near = KKTCandidate(np.array([[KINK_TOLERANCE / 2]]), empty, empty, empty, empty, empty)
        outside = KKTCandidate(np.array([[2 * KINK_TOLERANCE]]), empty, empty, empty, empty, empty)
        assert kkt_residuals(problem, near).x_stationarity < 1e-12
        assert kkt_residuals(problem, outside).x_stationarity > 0.4

    def test_slackness_is_measured_in_margin_units(self, demo):
        # x = -100 everywhere leaves every coupling constraint slack by 79 to 92
        x = np.full((4, 2), -100.0)
        zeros = np.zeros((4, 2, 2))
        small = KKTCandidate(x, zeros, zeros, zeros, np.full((4, 2, 2), 0.5), zeros)
        large = KKTCandidate(x, zeros, zeros, zeros, np.full((4, 2, 2), 1000.0), zeros)
        assert kkt_residuals(demo, small).coupling_slackness == pytest.approx(0.5)
        assert kkt_residuals(demo, large).coupling_slackness == pytest.approx(92.0)

    def test_violated_constraint_slackness_equals_violation(self, demo):
        # x = 0: G1 = -aggregate b, the largest entry is 21
        zeros = np.zeros((4, 2, 2))
        candidate = KKTCandidate(np.zeros((4, 2)), zeros, zeros, zeros, np.full((4, 2, 2), 466.0), zeros)
        residuals = kkt_residuals(demo, candidate)
        assert residuals.coupling_slackness == pytest.approx(21.0)
        assert residuals.coupling_feasibility == pytest.approx(21.0)

    def test_worst_and_flagged(self, demo):
        residuals = kkt_residuals(demo, _random_state(demo, 5))
        name, value = residuals.worst()
        assert value == max(residuals.as_dict().values())
        assert name in residuals.flagged(value / 2)
        assert residuals.flagged(value) == []

    @pytest.mark.slow
    def test_demo_oracle_passes(self, demo, demo_oracle):
        residuals = kkt_residuals(demo, demo_oracle.to_candidate())
        assert residuals.worst()[1] <= 1e-4


class TestConsensus:
    def test_identical_blocks(self, demo):
        shared = np.broadcast_to(np.array([[1.0, 0.5], [2.0, 0.0]]), (4, 2, 2)).copy()
        state = _with_blocks(demo, default_init(demo), Z_bar=shared, Lam1_bar=shared, Lam2_bar=shared)
        assert consensus_residuals(demo, state) == (0.0, 0.0, 0.0)

    def test_one_agent_disagrees(self, demo):
        lam1 = np.ones((4, 2, 2))
        lam1[0] = 3.0
        state = _with_blocks(demo, default_init(demo), Lam1_bar=lam1)
        cons_z, cons_l1, cons_l2 = consensus_residuals(demo, state)
        assert cons_l1 > 0
        assert cons_z == 0.0 and cons_l2 == 0.0


class TestCompactOperators:
    def test_shapes(self, demo):
        ops = compact_operators(demo)
        assert ops["E"].shape == (8, 16)
        assert ops["L"].shape == (16, 16)
        assert ops["Gamma"].shape == (16, 16)
        assert ops["B"].shape == (16,)

    def test_agent_sum(self, demo):
        E = compact_operators(demo)["E"]
        v = np.arange(16, dtype=float)
        assert_allclose(E @ v, v.reshape(4, 2, 2).sum(axis=1).ravel())


class TestLyapunov:
    def test_reference_against_itself(self, demo):
        state = _random_state(demo, 8)
        assert_allclose(lyapunov_value(state, state), 0.0, atol=1e-12)

    def test_lower_bound(self, demo):
        for seed in range(20):
            state = _random_state(demo, seed, scale=10.0)
            reference = _random_state(demo, 1000 + seed, scale=10.0)
            value = lyapunov_value(state, reference).sum()
            assert value >= lyapunov_lower_bound(state, reference) - 1e-9

    def test_components(self, demo):
        assert lyapunov_value(default_init(demo), _random_state(demo, 3)).shape == (8,)

    def test_series_from_run(self, demo):
        run = simulate(demo, default_init(demo), IntegratorConfig(0.01, 1.0, 10))
        series = lyapunov_series(run, run.final_state, label="final_state")
        assert series.values.shape == (len(run),)
        assert series.components.shape == (len(run), 8)
        assert series.values[-1] == pytest.approx(0.0, abs=1e-12)
        assert series.reference_label == "final_state"

    def test_increments(self):
        series = LyapunovSeries(np.arange(4.0), np.array([3.0, 2.0, 2.5, 1.0]), "supplied")
        assert_allclose(series.increments(), [-1.0, 0.5, -1.5])
        assert series.max_increment() == 0.5
        assert series.positive_increments() == 1
        assert series.positive_increments(threshold=0.5) == 0

    def test_monotone_series_has_no_positive_step(self):
        series = LyapunovSeries(np.arange(3.0), np.array([3.0, 2.0, 1.0]), "supplied")
        assert series.max_increment() == -1.0
        assert series.positive_increments() == 0

    def test_monitor_sees_every_step(self, demo):
        reference = _random_state(demo, 12)
        run = simulate(demo, default_init(demo), IntegratorConfig(0.01, 0.5, 10), reference=reference)
        steps = run.step_lyapunov
        assert steps.values.shape == (51,)
        assert len(run) == 6
        assert_allclose(steps.times[[0, 10, 50]], [0.0, 0.1, 0.5])
        assert steps.values[-1] == pytest.approx(lyapunov_value(run.final_state, reference).sum())

    def test_monitor_last_value(self, demo):
        state = _random_state(demo, 4)
        monitor = LyapunovMonitor(state)
        assert monitor.last is None
        monitor.update(0.0, state)
        assert monitor.last == pytest.approx(0.0, abs=1e-12)
        assert monitor.series().reference_label == "supplied"


class TestCertifyAndVerdict:
    def test_state_report(self, demo):
        report = certify(demo, default_init(demo))
        assert np.isfinite(report.eq_residual)
        payload = report.to_dict()
        assert set(payload) == {"kkt", "eq_residual", "consensus", "feasibility"}
        assert len(payload["kkt"]) == 8

    def test_candidate_without_raw_blocks(self, demo):
        report = certify(demo, KKTCandidate.from_state(default_init(demo)))
        assert math.isnan(report.eq_residual)
        passed, flagged = verdict(report, 1e-2)
        assert not passed
        assert "eq_residual" not in flagged

    def test_initial_state_fails(self, demo):
        passed, flagged = verdict(certify(demo, default_init(demo)))
        assert not passed
        assert "x_stationarity" in flagged
        assert "eq_residual" in flagged

    def test_slackness_series(self, demo):
        run = simulate(demo, default_init(demo), IntegratorConfig(0.01, 0.5, 10))
        series = slackness_series(demo, run)
        assert series.shape == (len(run), 2)
        assert np.all(series[0] == 0.0)
