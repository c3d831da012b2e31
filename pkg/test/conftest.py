"""
Shared fixtures: the demo instance, its oracle solve and one long demo run
"""

import pytest

from robust_allocation.dynamics_engine import IntegratorConfig, default_init, equilibrium_from_oracle, simulate
from robust_allocation.problem_model import demo_problem
from robust_allocation.reference_oracle import centralized_solve

from instances import DEMO_RUN_DT, DEMO_RUN_RECORD_EVERY, DEMO_RUN_T_END


@pytest.fixture(scope="session")
def demo():
    return demo_problem()


@pytest.fixture(scope="session")
def demo_oracle(demo):
    return centralized_solve(demo)


@pytest.fixture(scope="session")
def demo_reference(demo, demo_oracle):
    return equilibrium_from_oracle(demo, demo_oracle)


@pytest.fixture(scope="session")
def demo_run(demo, demo_reference):
    config = IntegratorConfig(DEMO_RUN_DT, DEMO_RUN_T_END, DEMO_RUN_RECORD_EVERY)
    return simulate(demo, default_init(demo), config, reference=demo_reference)
