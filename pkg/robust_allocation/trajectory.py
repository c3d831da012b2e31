"""
Trajectory Recorder Module
Collects swarm snapshots during a run and derives the per-snapshot monitor series
"""

import csv
from dataclasses import dataclass

import numpy as np

from robust_allocation.certification import (
    consensus_residuals,
    equilibrium_residual,
    lyapunov_value,
)
from robust_allocation.robust_counterpart import coupling_terms

RAW_BLOCK_NAMES = ("x_bar", "Z_bar", "W_bar", "U", "Lam1_bar", "Lam2_bar", "Y1", "Y2")
OUTPUT_BLOCK_NAMES = ("x", "Z", "W", "Lam1", "Lam2")


@dataclass(frozen=True, eq=False)
class MonitorRow:
    t: float
    G1: np.ndarray
    G2: np.ndarray
    V: float
    eq_residual: float
    cons_Z: float
    cons_L1: float
    cons_L2: float


@dataclass(frozen=True, eq=False)
class Trajectory:
    """
    Time-indexed swarm snapshots with one monitor row each.

    times[0] is 0 and times are strictly increasing. step_lyapunov holds V after
    every integrator step when the run was given a reference equilibrium.
    """

    times: np.ndarray
    states: tuple
    monitors: tuple
    reference_label: str
    early_stopped: bool = False
    step_lyapunov: object = None

    @property
    def final_state(self):
        return self.states[-1]

    def __len__(self):
        return len(self.states)

    def block_sup_norms(self):
        """Largest absolute entry of every raw and output block over the whole run."""
        names = RAW_BLOCK_NAMES + OUTPUT_BLOCK_NAMES
        return {
            name: float(max((np.max(np.abs(getattr(s, name)), initial=0.0) for s in self.states), default=0.0))
            for name in names
        }

    def csv_header(self):
        state = self.states[0]
        n, q = state.x.shape
        m = state.Z.shape[1]
        header = ["t"]
        header += [f"x_{i + 1}_{l + 1}" for i in range(n) for l in range(q)]
        header += [f"G1_{j + 1}_{l + 1}" for j in range(m) for l in range(q)]
        header += [f"G2_{j + 1}_{l + 1}" for j in range(m) for l in range(q)]
        header += ["V", "eq_residual", "cons_Z", "cons_L1", "cons_L2"]
        return header

    def csv_rows(self):
        for state, row in zip(self.states, self.monitors):
            values = [row.t, *state.x.ravel(), *row.G1.ravel(), *row.G2.ravel(),
                      row.V, row.eq_residual, row.cons_Z, row.cons_L1, row.cons_L2]
            yield [repr(float(v)) for v in values]

    def write_csv(self, path):
        """Write the plot-ready time series; repr keeps decimals locale independent."""
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(self.csv_header())
            writer.writerows(self.csv_rows())


class TrajectoryRecorder:
    """
    Records snapshots while the integrator runs.

    Monitors that need the Lyapunov reference are derived in build(), once the
    final state is known.
    """

    def __init__(self, problem):
        """Initialize recorder for one problem instance."""
        self.problem = problem
        self.times = []
        self.states = []

    @property
    def count(self):
        return len(self.states)

    def update(self, t, state):
        """
        Append a snapshot.

        Args:
            t: Simulation time, strictly larger than the previous snapshot
            state: SwarmState
        """
        if self.times and t <= self.times[-1]:
            raise ValueError(f"snapshot times must increase: {t} after {self.times[-1]}")
        self.times.append(float(t))
        self.states.append(state)

    def build(self, reference=None, early_stopped=False, step_lyapunov=None):
        """
        Freeze the recorded snapshots into a Trajectory.

        Args:
            reference: Lyapunov reference state; the final snapshot when omitted
            early_stopped: Whether the integrator stopped before t_end
            step_lyapunov: Optional per-step LyapunovSeries from the integrator

        Returns:
            Trajectory
        """
        label = "supplied" if reference is not None else "final_state"
        reference = reference if reference is not None else self.states[-1]
        monitors = []
        for t, state in zip(self.times, self.states):
            H1, H2 = coupling_terms(self.problem, state.x, state.Z, state.W)
            cons = consensus_residuals(self.problem, state)
            monitors.append(MonitorRow(
                t=t,
                G1=H1.sum(axis=0),
                G2=H2.sum(axis=0),
                V=float(lyapunov_value(state, reference).sum()),
                eq_residual=equilibrium_residual(self.problem, state),
                cons_Z=cons[0],
                cons_L1=cons[1],
                cons_L2=cons[2],
            ))
        return Trajectory(
            times=np.array(self.times),
            states=tuple(self.states),
            monitors=tuple(monitors),
            reference_label=label,
            early_stopped=early_stopped,
            step_lyapunov=step_lyapunov,
        )
