"""
Certification Module
KKT residuals, equilibrium residuals, Lyapunov monitoring and consensus checks
"""

from dataclasses import asdict, dataclass, fields
from functools import lru_cache

import numpy as np
from scipy import sparse

from robust_allocation.config import CHECK_TOLERANCE, KINK_TOLERANCE, Z_CONSENSUS_GAIN
from robust_allocation.convex_geometry import (
    projection_variational_residual,
    stationary_subgradient,
    subgradient,
)
from robust_allocation.robust_counterpart import dual_feasibility_eval


@dataclass(frozen=True, eq=False)
class KKTCandidate:
    """Primal-dual candidate (x, Z, W, U, Lam1, Lam2) in (n, q) / (n, m, q) layout."""

    x: np.ndarray
    Z: np.ndarray
    W: np.ndarray
    U: np.ndarray
    Lam1: np.ndarray
    Lam2: np.ndarray

    @classmethod
    def from_state(cls, state):
        return cls(state.x, state.Z, state.W, state.U, state.Lam1, state.Lam2)


@dataclass(frozen=True)
class KKTResiduals:
    """
    One residual per optimality condition, each a worst case over its blocks.

    - x_stationarity: -df - A Lam1 - Ahat Lam2 in the normal cone of the local set,
      with the best element of df at l1 kinks
    - z_stationarity / w_stationarity: the same test on the orthant for Z and W
    - coupling_feasibility / deviation_feasibility: positive parts of G1 and G2
    - z_consensus: ||L Z||
    - coupling_slackness / deviation_slackness: |min(mean multiplier, -aggregated margin)|
    """

    x_stationarity: float
    z_stationarity: float
    w_stationarity: float
    coupling_feasibility: float
    deviation_feasibility: float
    z_consensus: float
    coupling_slackness: float
    deviation_slackness: float

    def as_dict(self):
        return asdict(self)

    def worst(self):
        name = max(self.as_dict(), key=lambda key: getattr(self, key))
        return name, getattr(self, name)

    def flagged(self, tolerance):
        return [f.name for f in fields(self) if getattr(self, f.name) > tolerance]


@dataclass(frozen=True, eq=False)
class CertificationReport:
    kkt: KKTResiduals
    eq_residual: float
    consensus: tuple
    feasibility: object

    def to_dict(self):
        return {
            "kkt": self.kkt.as_dict(),
            "eq_residual": self.eq_residual,
            "consensus": {"Z": self.consensus[0], "Lam1": self.consensus[1], "Lam2": self.consensus[2]},
            "feasibility": {
                "G1": self.feasibility.G1.tolist(),
                "G2": self.feasibility.G2.tolist(),
                "robust_primal": self.feasibility.robust_primal.tolist(),
                "consensus_z": self.feasibility.consensus_z,
            },
        }


def _orthant_block_residual(value, direction):
    """max over (i, j) blocks of ||P+(z + v) - z|| with z already nonnegative."""
    z = np.maximum(value, 0.0)
    gap = np.linalg.norm(np.maximum(z + direction, 0.0) - z, axis=-1)
    return float(np.max(gap, initial=0.0))


def kkt_residuals(problem, candidate):
    """
    Residuals of the optimality conditions of the dualized robust problem.

    Args:
        problem: RobustAllocationProblem
        candidate: SwarmState or KKTCandidate

    Returns:
        KKTResiduals (all zero exactly at a KKT point)
    """
    data = problem.constraints
    shape = (problem.n, problem.m, problem.q)
    x = np.asarray(candidate.x, dtype=float).reshape(problem.n, problem.q)
    Z, W, U, Lam1, Lam2 = (np.asarray(getattr(candidate, name), dtype=float).reshape(shape)
                           for name in ("Z", "W", "U", "Lam1", "Lam2"))
    scale = data.gamma_array[None, :, None] / problem.n
    lap = problem.laplacian.apply

    # 1) Stationarity in x through the projection fixed point
    pull = (data.A * Lam1).sum(axis=1) + (data.Ahat * Lam2).sum(axis=1)
    x_res = 0.0
    for local_set, objective, xi, ci in zip(problem.sets, problem.objectives, x, pull):
        g = stationary_subgradient(objective, local_set, xi, ci, KINK_TOLERANCE) + ci
        x_res = max(x_res, projection_variational_residual(local_set, xi, -g))

    # 2) Stationarity in Z and W on the orthant
    z_res = _orthant_block_residual(Z, -scale * Lam1 + Lam2 - lap(U))
    w_res = _orthant_block_residual(W, -Lam1 + Lam2)

    # 3) Feasibility, consensus and slackness on aggregated margins
    margins = dual_feasibility_eval(problem, x, Z, W)
    return KKTResiduals(
        x_stationarity=x_res,
        z_stationarity=z_res,
        w_stationarity=w_res,
        coupling_feasibility=float(max(np.max(margins.G1, initial=0.0), 0.0)),
        deviation_feasibility=float(max(np.max(margins.G2, initial=0.0), 0.0)),
        z_consensus=margins.consensus_z,
        coupling_slackness=_complementarity(Lam1.mean(axis=0), margins.G1),
        deviation_slackness=_complementarity(Lam2.mean(axis=0), margins.G2),
    )


def _complementarity(multiplier, margin):
    """max |min(lam, -G)|: zero iff lam >= 0, G <= 0 and lam * G = 0, in units of G."""
    return float(np.max(np.abs(np.minimum(multiplier, -margin)), initial=0.0))


def _diag(values):
    if values.size == 0:
        return sparse.csr_matrix((0, 0))
    return sparse.diags(values, format="csr")


@lru_cache(maxsize=16)
def compact_operators(problem):
    """
    Sparse operators of the stacked dynamics for one problem.

    Returns:
        dict with E (nq x mnq agent sum), A_star, Ahat_star, Gamma (diagonal, mnq),
        B (stacked shares) and L (lifted Laplacian L (x) I_mq)
    """
    n, m, q = problem.n, problem.m, problem.q
    data = problem.constraints
    if m == 0:
        E = sparse.csr_matrix((n * q, 0))
    else:
        E = sparse.kron(sparse.kron(sparse.identity(n), np.ones((1, m))), sparse.identity(q), format="csr")
    gamma = np.broadcast_to(data.gamma_array[None, :, None], (n, m, q))
    return {
        "E": E,
        "A_star": _diag(data.A.ravel()),
        "Ahat_star": _diag(data.Ahat.ravel()),
        "Gamma": _diag(gamma.ravel()),
        "B": data.b.ravel(),
        "L": problem.laplacian.lifted(m * q),
    }


def equilibrium_residual(problem, state):
    """
    Distance from zero to the set-valued right-hand side, written with the sparse
    compact operators.

    At l1 kinks (|x_l| <= KINK_TOLERANCE) and at the l2norm apex the subgradient is
    the element closest to stationarity; everywhere else the selection is the one
    the dynamics use, so the value equals the norm of the vector field there.
    """
    ops = compact_operators(problem)
    E, A_star, Ahat_star, Gamma, B, L = (ops[k] for k in ("E", "A_star", "Ahat_star", "Gamma", "B", "L"))
    n = problem.n
    x_bar, x = state.x_bar.ravel(), state.x.ravel()
    Z_bar, Z = state.Z_bar.ravel(), state.Z.ravel()
    W_bar, W = state.W_bar.ravel(), state.W.ravel()
    U = state.U.ravel()
    L1_bar, L1 = state.Lam1_bar.ravel(), state.Lam1.ravel()
    L2_bar, L2 = state.Lam2_bar.ravel(), state.Lam2.ravel()
    Y1, Y2 = state.Y1.ravel(), state.Y2.ravel()

    pull = E @ (A_star @ L1) + E @ (Ahat_star @ L2)
    offsets = (x_bar - x + pull).reshape(state.x.shape)
    f_x = np.concatenate([
        subgradient(obj, xi, offset=ci, kink_tolerance=KINK_TOLERANCE)
        for obj, xi, ci in zip(problem.objectives, state.x, offsets)
    ])

    L_Z = L @ Z
    L_L1 = L @ L1
    L_L2 = L @ L2
    rows = [
        -x_bar + x - f_x - pull,
        -Z_bar + Z - (Gamma @ L1) / n + L2 - L @ U - Z_CONSENSUS_GAIN * L_Z,
        -W_bar + W - L1 + L2,
        L_Z,
        -L1_bar + L1 + A_star @ (E.T @ x) + (Gamma @ Z) / n + W - B + L @ Y1 - L_L1,
        -L2_bar + L2 + Ahat_star @ (E.T @ x) - Z - W + L @ Y2 - L_L2,
        -L_L1,
        -L_L2,
    ]
    return float(np.linalg.norm(np.concatenate(rows)))


def consensus_residuals(problem, state):
    """(||L Z||, ||L Lam1||, ||L Lam2||) with the lifted Laplacian."""
    lap = problem.laplacian.apply
    return tuple(float(np.linalg.norm(lap(block))) for block in (state.Z, state.Lam1, state.Lam2))


def lyapunov_value(state, reference):
    """
    The eight Lyapunov components of a state against a reference equilibrium.

    Projected blocks use 1/2 (||raw - out*||^2 - ||raw - out||^2); U, Y1, Y2 use
    1/2 ||v - v*||^2.

    Returns:
        Array of 8 components
    """
    def _projected(raw, out, out_ref):
        return 0.5 * (np.sum((raw - out_ref) ** 2) - np.sum((raw - out) ** 2))

    def _plain(value, value_ref):
        return 0.5 * np.sum((value - value_ref) ** 2)

    return np.array([
        _projected(state.x_bar, state.x, reference.x),
        _projected(state.Z_bar, state.Z, reference.Z),
        _projected(state.W_bar, state.W, reference.W),
        _plain(state.U, reference.U),
        _projected(state.Lam1_bar, state.Lam1, reference.Lam1),
        _projected(state.Lam2_bar, state.Lam2, reference.Lam2),
        _plain(state.Y1, reference.Y1),
        _plain(state.Y2, reference.Y2),
    ])


def lyapunov_lower_bound(state, reference):
    """Half the squared distance of outputs, U and Y to the reference."""
    pairs = (
        (state.x, reference.x), (state.Z, reference.Z), (state.W, reference.W), (state.U, reference.U),
        (state.Lam1, reference.Lam1), (state.Lam2, reference.Lam2), (state.Y1, reference.Y1), (state.Y2, reference.Y2),
    )
    return float(0.5 * sum(np.sum((a - b) ** 2) for a, b in pairs))


@dataclass(frozen=True, eq=False)
class LyapunovSeries:
    times: np.ndarray
    values: np.ndarray
    reference_label: str
    components: np.ndarray = None

    def increments(self):
        return np.diff(self.values)

    def max_increment(self):
        """Largest V(t_k+1) - V(t_k) over consecutive entries (may be negative)."""
        diffs = self.increments()
        return float(diffs.max()) if diffs.size else 0.0

    def positive_increments(self, threshold=0.0):
        return int(np.count_nonzero(self.increments() > threshold))


class LyapunovMonitor:
    """
    Tracks V against a fixed reference equilibrium after every integrator step.

    The integrator feeds it every state, not only recorded snapshots, so the
    increments it reports are true one-step increments.
    """

    def __init__(self, reference, label="supplied"):
        """Initialize monitor with the reference SwarmState."""
        self.reference = reference
        self.label = label
        self.times = []
        self.values = []

    @property
    def last(self):
        return self.values[-1] if self.values else None

    def update(self, t, state):
        value = float(lyapunov_value(state, self.reference).sum())
        self.times.append(float(t))
        self.values.append(value)
        return value

    def series(self):
        return LyapunovSeries(
            times=np.array(self.times),
            values=np.array(self.values),
            reference_label=self.label,
        )


def lyapunov_series(trajectory, reference, label="supplied"):
    """
    Lyapunov components at every snapshot of a trajectory.

    Args:
        trajectory: Trajectory
        reference: Reference equilibrium SwarmState
        label: Name of the reference, carried into reports

    Returns:
        LyapunovSeries
    """
    components = np.array([lyapunov_value(state, reference) for state in trajectory.states])
    return LyapunovSeries(
        times=np.asarray(trajectory.times),
        values=components.sum(axis=1),
        components=components,
        reference_label=label,
    )


def slackness_series(problem, trajectory):
    """(coupling_slackness, deviation_slackness) at every snapshot."""
    out = []
    for state in trajectory.states:
        res = kkt_residuals(problem, state)
        out.append((res.coupling_slackness, res.deviation_slackness))
    return np.array(out)


def certify(problem, candidate):
    """
    Build the full certification report.

    Args:
        problem: RobustAllocationProblem
        candidate: SwarmState (equilibrium residual included) or KKTCandidate

    Returns:
        CertificationReport; eq_residual is NaN for candidates without raw blocks
    """
    kkt = kkt_residuals(problem, candidate)
    eq_residual = equilibrium_residual(problem, candidate) if hasattr(candidate, "x_bar") else float("nan")
    return CertificationReport(
        kkt=kkt,
        eq_residual=eq_residual,
        consensus=consensus_residuals(problem, candidate),
        feasibility=dual_feasibility_eval(problem, candidate.x, candidate.Z, candidate.W),
    )


def verdict(report, tolerance=CHECK_TOLERANCE):
    """
    Classify a report against a KKT tolerance.

    Priority:
    1. Any KKT residual above tolerance fails
    2. Equilibrium residual above tolerance fails (when available)

    Returns:
        (passed, flagged residual names)
    """
    flagged = report.kkt.flagged(tolerance)
    if np.isfinite(report.eq_residual) and report.eq_residual > tolerance:
        flagged.append("eq_residual")
    return not flagged, flagged
