"""
Dynamics Engine Module
Distributed projected primal-dual dynamics, forward-Euler integration and trajectory runs
"""

import time
from dataclasses import dataclass

import numpy as np
from absl import logging

from robust_allocation.config import (
    DEFAULT_DT,
    DEFAULT_RECORD_EVERY,
    DEFAULT_T_END,
    KINK_TOLERANCE,
    PROGRESS_EVERY_SNAPSHOTS,
    Z_CONSENSUS_GAIN,
)
from robust_allocation.certification import LyapunovMonitor, equilibrium_residual
from robust_allocation.convex_geometry import StackedProjector, project_nonneg, stationary_subgradient, subgradient
from robust_allocation.errors import ConfigError, DimensionMismatchError, DivergenceError
from robust_allocation.trajectory import TrajectoryRecorder

RAW_BLOCKS = ("x_bar", "Z_bar", "W_bar", "U", "Lam1_bar", "Lam2_bar", "Y1", "Y2")
OUTPUT_BLOCKS = ("x", "Z", "W", "Lam1", "Lam2")
_STEP_SLACK = 1e-9  # relative float slack when t_end / dt is integral


@dataclass(frozen=True, eq=False)
class SwarmState:
    """
    Full raw state of the swarm plus its projected outputs.

    x_bar is (n, q); every other raw block is (n, m, q) with agent-major stacking.
    Outputs are always the projections of their raw blocks: x onto the local sets,
    Z, W, Lam1, Lam2 onto the nonnegative orthant.
    """

    x_bar: np.ndarray
    Z_bar: np.ndarray
    W_bar: np.ndarray
    U: np.ndarray
    Lam1_bar: np.ndarray
    Lam2_bar: np.ndarray
    Y1: np.ndarray
    Y2: np.ndarray
    x: np.ndarray
    Z: np.ndarray
    W: np.ndarray
    Lam1: np.ndarray
    Lam2: np.ndarray

    @classmethod
    def from_raw(cls, problem, projector=None, **raw):
        """
        Build a state from its eight raw blocks, projecting the outputs.

        Args:
            problem: RobustAllocationProblem
            projector: Optional StackedProjector reused across steps
            **raw: x_bar, Z_bar, W_bar, U, Lam1_bar, Lam2_bar, Y1, Y2

        Returns:
            SwarmState
        """
        n, m, q = problem.n, problem.m, problem.q
        blocks = {}
        for name in RAW_BLOCKS:
            value = np.array(raw[name], dtype=float)
            expected = (n, q) if name == "x_bar" else (n, m, q)
            if value.size != int(np.prod(expected)):
                raise DimensionMismatchError(f"block {name} has {value.size} entries, expected shape {expected}")
            blocks[name] = value.reshape(expected)
        projector = projector or StackedProjector(problem.sets)
        return cls(
            **blocks,
            x=projector.project(blocks["x_bar"]),
            Z=project_nonneg(blocks["Z_bar"]),
            W=project_nonneg(blocks["W_bar"]),
            Lam1=project_nonneg(blocks["Lam1_bar"]),
            Lam2=project_nonneg(blocks["Lam2_bar"]),
        )

    def raw_blocks(self):
        return {name: getattr(self, name) for name in RAW_BLOCKS}

    def stacked(self):
        """Raw state vector in the order x_bar, Z_bar, W_bar, U, Lam1_bar, Lam2_bar, Y1, Y2."""
        return np.concatenate([getattr(self, name).ravel() for name in RAW_BLOCKS])


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = DEFAULT_DT
    t_end: float = DEFAULT_T_END
    record_every: int = DEFAULT_RECORD_EVERY
    early_stop_tol: float = None

    def __post_init__(self):
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if not (np.isfinite(self.t_end) and self.t_end >= self.dt):
            raise ConfigError(f"t_end must be at least dt, got t_end={self.t_end}, dt={self.dt}")
        if int(self.record_every) != self.record_every or self.record_every < 1:
            raise ConfigError(f"record_every must be a positive integer, got {self.record_every}")
        if self.early_stop_tol is not None and not self.early_stop_tol > 0:
            raise ConfigError(f"early_stop_tol must be positive, got {self.early_stop_tol}")

    @property
    def n_steps(self):
        """Number of Euler steps; the last one is shortened so the run ends exactly at t_end."""
        ratio = self.t_end / self.dt
        return int(np.ceil(ratio * (1.0 - _STEP_SLACK)))

    def step_size(self, k):
        """Size of step k (1-based): dt, except a possibly shorter final step."""
        if k < self.n_steps:
            return self.dt
        remainder = self.t_end - (self.n_steps - 1) * self.dt
        return remainder if remainder < self.dt * (1.0 - _STEP_SLACK) else self.dt

    def step_time(self, k):
        return self.t_end if k == self.n_steps else k * self.dt


def _field_blocks(problem, state):
    data = problem.constraints
    n = problem.n
    lap = problem.laplacian.apply
    scale = data.gamma_array[None, :, None] / n

    # 1) Primal block with a frozen subgradient selection
    f_x = np.stack([subgradient(obj, xi) for obj, xi in zip(problem.objectives, state.x)])
    d_x = (-state.x_bar + state.x - f_x
           - (data.A * state.Lam1).sum(axis=1) - (data.Ahat * state.Lam2).sum(axis=1))

    # 2) Budget duals; U integrates the Z disagreement and Z_CONSENSUS_GAIN damps it
    L_lam1 = lap(state.Lam1)
    L_lam2 = lap(state.Lam2)
    L_z = lap(state.Z)
    d_Z = (-state.Z_bar + state.Z - scale * state.Lam1 + state.Lam2
           - lap(state.U) - Z_CONSENSUS_GAIN * L_z)
    d_W = -state.W_bar + state.W - state.Lam1 + state.Lam2
    d_U = L_z

    # 3) Multipliers track local constraint violation plus neighbor disagreement
    H1 = data.A * state.x[:, None, :] + scale * state.Z + state.W - data.b
    H2 = data.Ahat * state.x[:, None, :] - state.Z - state.W
    d_lam1 = -state.Lam1_bar + state.Lam1 + H1 + lap(state.Y1) - L_lam1
    d_lam2 = -state.Lam2_bar + state.Lam2 + H2 + lap(state.Y2) - L_lam2

    return {
        "x_bar": d_x,
        "Z_bar": d_Z,
        "W_bar": d_W,
        "U": d_U,
        "Lam1_bar": d_lam1,
        "Lam2_bar": d_lam2,
        "Y1": -L_lam1,
        "Y2": -L_lam2,
    }


def vector_field(problem, state):
    """
    Right-hand side of the projected primal-dual dynamics.

    Args:
        problem: RobustAllocationProblem
        state: SwarmState with outputs consistent with its raw blocks

    Returns:
        Stacked derivative of length (7m + 1) n q, ordered like SwarmState.stacked()
    """
    if state.x_bar.shape != (problem.n, problem.q) or state.Z_bar.shape != (problem.n, problem.m, problem.q):
        raise DimensionMismatchError("state dimensions do not match the problem")
    blocks = _field_blocks(problem, state)
    return np.concatenate([blocks[name].ravel() for name in RAW_BLOCKS])


def step(problem, state, dt, projector=None):
    """
    One forward-Euler step; outputs are re-projected afterwards.

    Raises:
        ConfigError: If dt is not positive
        DivergenceError: Naming the first raw block that became non-finite
    """
    if not dt > 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    derivative = _field_blocks(problem, state)
    raw = {}
    for name in RAW_BLOCKS:
        value = getattr(state, name) + dt * derivative[name]
        if not np.all(np.isfinite(value)):
            raise DivergenceError(name)
        raw[name] = value
    return SwarmState.from_raw(problem, projector=projector, **raw)


def default_init(problem, projector=None):
    """Start positions for x_bar, every multiplier and auxiliary block zero."""
    zeros = np.zeros((problem.n, problem.m, problem.q))
    return SwarmState.from_raw(
        problem,
        projector=projector,
        x_bar=problem.start_positions(),
        **{name: zeros for name in RAW_BLOCKS if name != "x_bar"},
    )


def simulate(problem, init, config, reference=None, progress=None):
    """
    Integrate the dynamics over a fixed horizon.

    Args:
        problem: Validated RobustAllocationProblem
        init: Initial SwarmState
        config: IntegratorConfig
        reference: Optional Lyapunov reference equilibrium. When given, V is
            evaluated after every step (Trajectory.step_lyapunov); snapshot V
            falls back to the final state otherwise
        progress: Optional callback(t, state, V) every PROGRESS_EVERY_SNAPSHOTS
            snapshots; V is None without a reference

    Returns:
        Trajectory

    Raises:
        DivergenceError: With the simulation time of the failing step
    """
    projector = StackedProjector(problem.sets)
    recorder = TrajectoryRecorder(problem)
    recorder.update(0.0, init)
    monitor = LyapunovMonitor(reference) if reference is not None else None
    if monitor:
        monitor.update(0.0, init)
    state = init
    early_stopped = False
    started = time.time()
    logging.info("Simulating '%s': dt=%g t_end=%g steps=%d", problem.name, config.dt, config.t_end, config.n_steps)

    for k in range(1, config.n_steps + 1):
        t = config.step_time(k)
        try:
            state = step(problem, state, config.step_size(k), projector)
        except DivergenceError as exc:
            logging.warning("Divergence in block %s at t=%g", exc.block, t)
            raise DivergenceError(exc.block, t) from exc
        if monitor:
            monitor.update(t, state)

        if k % config.record_every != 0 and k != config.n_steps:
            continue
        recorder.update(t, state)
        if progress is not None and recorder.count % PROGRESS_EVERY_SNAPSHOTS == 0:
            progress(t, state, monitor.last if monitor else None)
        if config.early_stop_tol is not None:
            if equilibrium_residual(problem, state) < config.early_stop_tol:
                early_stopped = True
                logging.info("Early stop at t=%g", t)
                break

    logging.info("Simulation finished in %.2f s", time.time() - started)
    return recorder.build(
        reference=reference,
        early_stopped=early_stopped,
        step_lyapunov=monitor.series() if monitor else None,
    )


def equilibrium_from_oracle(problem, solution, projector=None):
    """
    Lift a centralized solution to a raw swarm state at equilibrium.

    U is zero, Z and the multipliers are in consensus, and Y1, Y2 absorb the
    per-agent constraint imbalances through the Laplacian pseudo-inverse. x_bar
    uses the subgradient that certifies x, so an optimum at an l1 kink on the
    boundary of its local set projects back onto itself.

    Args:
        problem: RobustAllocationProblem the solution belongs to
        solution: OracleSolution

    Returns:
        SwarmState
    """
    n, m, q = problem.n, problem.m, problem.q
    data = problem.constraints
    scale = data.gamma_array[None, :, None] / n
    x = np.asarray(solution.x_star, dtype=float).reshape(n, q)
    Z = np.broadcast_to(solution.z_star, (n, m, q)).copy()
    W = np.asarray(solution.W_star, dtype=float).reshape(n, m, q)
    lam1 = np.broadcast_to(solution.lam1, (n, m, q)).copy()
    lam2 = np.broadcast_to(solution.lam2, (n, m, q)).copy()

    pull = (data.A * lam1).sum(axis=1) + (data.Ahat * lam2).sum(axis=1)
    f_x = np.stack([
        stationary_subgradient(obj, local_set, xi, ci, KINK_TOLERANCE)
        for obj, local_set, xi, ci in zip(problem.objectives, problem.sets, x, pull)
    ])
    x_bar = x - f_x - pull
    Z_bar = Z - scale * lam1 + lam2
    W_bar = W - lam1 + lam2

    H1 = data.A * x[:, None, :] + scale * Z + W - data.b
    H2 = data.Ahat * x[:, None, :] - Z - W
    pinv = problem.laplacian.pseudo_inverse

    def _absorb(H):
        imbalance = H - H.mean(axis=0, keepdims=True)
        return -(pinv @ imbalance.reshape(n, -1)).reshape(H.shape), H.mean(axis=0, keepdims=True)

    Y1, mean1 = _absorb(H1)
    Y2, mean2 = _absorb(H2)
    return SwarmState.from_raw(
        problem,
        projector=projector,
        x_bar=x_bar,
        Z_bar=Z_bar,
        W_bar=W_bar,
        U=np.zeros((n, m, q)),
        Lam1_bar=lam1 + mean1,
        Lam2_bar=lam2 + mean2,
        Y1=Y1,
        Y2=Y2,
    )


@dataclass(frozen=True)
class StepHalvingReport:
    dt: float
    final_x_gap: float
    worst_increment: float
    worst_increment_half: float


def step_halving_study(problem, init, config, reference):
    """
    Run at dt and dt/2 and compare endpoints and worst one-step Lyapunov increments.

    Args:
        problem: RobustAllocationProblem
        init: Initial SwarmState
        config: IntegratorConfig for the coarse run
        reference: Lyapunov reference equilibrium shared by both runs

    Returns:
        StepHalvingReport
    """
    fine = IntegratorConfig(config.dt / 2, config.t_end, config.record_every * 2)
    coarse_run = simulate(problem, init, config, reference=reference)
    fine_run = simulate(problem, init, fine, reference=reference)
    return StepHalvingReport(
        dt=config.dt,
        final_x_gap=float(np.max(np.abs(coarse_run.final_state.x - fine_run.final_state.x))),
        worst_increment=coarse_run.step_lyapunov.max_increment(),
        worst_increment_half=fine_run.step_lyapunov.max_increment(),
    )
