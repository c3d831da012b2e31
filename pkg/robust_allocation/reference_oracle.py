"""
Reference Oracle Module
Centralized solver of the dualized robust problem used to cross-validate the swarm
"""

from dataclasses import dataclass

import numpy as np
from absl import logging

from robust_allocation.certification import KKTCandidate, kkt_residuals
from robust_allocation.config import (
    ORACLE_BRACKET_TRIAL_ITER,
    ORACLE_CHECK_EVERY,
    ORACLE_DUAL_STEP,
    ORACLE_MAX_ITER,
    ORACLE_METHODS,
    ORACLE_STEP_BRACKET,
    ORACLE_STEP_MARGIN,
    ORACLE_TOLERANCE,
)
from robust_allocation.convex_geometry import StackedProjector, objective_value, subgradient
from robust_allocation.errors import ConfigError, OracleConvergenceError


@dataclass(frozen=True, eq=False)
class OracleSolution:
    """
    Centralized optimum with consensus variables shared across agents.

    x_star is (n, q); z_star, lam1, lam2 are (m, q); W_star is (n, m, q).
    """

    x_star: np.ndarray
    z_star: np.ndarray
    W_star: np.ndarray
    lam1: np.ndarray
    lam2: np.ndarray
    objective_value: float
    iterations: int
    final_kkt: object
    method: str
    tolerance: float

    @property
    def Z_star(self):
        return np.broadcast_to(self.z_star, self.W_star.shape).copy()

    def to_candidate(self):
        """Lifted distributed view: U = 0, Z and multipliers identical across agents."""
        shape = self.W_star.shape
        return KKTCandidate(
            x=self.x_star,
            Z=self.Z_star,
            W=self.W_star,
            U=np.zeros(shape),
            Lam1=np.broadcast_to(self.lam1, shape).copy(),
            Lam2=np.broadcast_to(self.lam2, shape).copy(),
        )


class _SaddleLayout:
    """
    Index bookkeeping for u = [x (nq), z (mq), w (nmq)] and the dual rows.

    Rows: coupling (mq), deviation (mq), then one q-block per agent whose
    objective has a dualized nonsmooth term (l1 box or l2 ball).
    """

    def __init__(self, problem):
        """Initialize layout and the dense operator K with offsets c."""
        n, m, q = problem.n, problem.m, problem.q
        data = problem.constraints
        self.n, self.m, self.q = n, m, q
        self.nx, self.nz, self.nw = n * q, m * q, n * m * q
        self.nu = self.nx + self.nz + self.nw
        self.n_con = 2 * m * q
        self.l1_agents = [i for i, obj in enumerate(problem.objectives) if obj.kind == "quadratic_plus_l1"]
        self.l2_agents = [i for i, obj in enumerate(problem.objectives) if obj.kind == "l2norm"]
        self.smooth = np.array([obj.kind != "l2norm" for obj in problem.objectives])
        self.p = np.stack([obj.p for obj in problem.objectives])
        dual_agents = self.l1_agents + self.l2_agents
        n_rows = self.n_con + q * len(dual_agents)

        K = np.zeros((n_rows, self.nu))
        c = np.zeros(n_rows)
        for j in range(m):
            for l in range(q):
                r1 = j * q + l
                r2 = m * q + j * q + l
                K[r1, self.nx + j * q + l] = data.gamma[j]
                K[r2, self.nx + j * q + l] = -n
                c[r1] = data.b_total[j, l]
                for i in range(n):
                    K[r1, i * q + l] = data.A[i, j, l]
                    K[r2, i * q + l] = data.Ahat[i, j, l]
                    col = self.nx + self.nz + i * m * q + j * q + l
                    K[r1, col] = 1.0
                    K[r2, col] = -1.0
        self.agent_rows = {}
        for k, i in enumerate(dual_agents):
            start = self.n_con + k * q
            self.agent_rows[i] = slice(start, start + q)
            for l in range(q):
                K[start + l, i * q + l] = 1.0
            if i in self.l2_agents:
                c[start:start + q] = self.p[i]
        self.K = K
        self.c = c

    def split(self, u):
        x = u[:self.nx].reshape(self.n, self.q)
        z = u[self.nx:self.nx + self.nz].reshape(self.m, self.q)
        w = u[self.nx + self.nz:].reshape(self.n, self.m, self.q)
        return x, z, w

    def multipliers(self, y):
        mq = self.m * self.q
        return y[:mq].reshape(self.m, self.q), y[mq:2 * mq].reshape(self.m, self.q)

    def project_dual(self, y):
        out = y.copy()
        out[:self.n_con] = np.maximum(out[:self.n_con], 0.0)
        for i in self.l1_agents:
            rows = self.agent_rows[i]
            out[rows] = np.clip(out[rows], -1.0, 1.0)
        for i in self.l2_agents:
            rows = self.agent_rows[i]
            size = np.linalg.norm(out[rows])
            if size > 1.0:
                out[rows] = out[rows] / size
        return out


def _candidate(layout, u, y):
    x, z, w = layout.split(u)
    lam1, lam2 = layout.multipliers(y)
    shape = (layout.n, layout.m, layout.q)
    return KKTCandidate(
        x=x,
        Z=np.broadcast_to(z, shape).copy(),
        W=w.copy(),
        U=np.zeros(shape),
        Lam1=np.broadcast_to(lam1, shape).copy(),
        Lam2=np.broadcast_to(lam2, shape).copy(),
    )


def _start(problem, layout, projector):
    u = np.zeros(layout.nu)
    u[:layout.nx] = projector.project(problem.start_positions()).ravel()
    return u, np.zeros(layout.K.shape[0])


def _project_primal(layout, projector, u):
    x, z, w = layout.split(u)
    return np.concatenate([projector.project(x).ravel(), np.maximum(z, 0.0).ravel(), np.maximum(w, 0.0).ravel()])


def _solve_primal_dual(problem, layout, projector, tol, max_iter):
    K, c = layout.K, layout.c
    norm_k = max(np.linalg.norm(K, 2) if K.size else 0.0, 1.0)
    sigma = ORACLE_DUAL_STEP / norm_k
    tau = ORACLE_STEP_MARGIN / (1.0 + sigma * norm_k ** 2)
    u, y = _start(problem, layout, projector)
    residuals = None

    for k in range(1, max_iter + 1):
        # 1) Primal: gradient of the smooth quadratics plus K^T y, then project
        grad = K.T @ y
        x, _, _ = layout.split(u)
        grad[:layout.nx] += (2.0 * (x - layout.p) * layout.smooth[:, None]).ravel()
        u_next = _project_primal(layout, projector, u - tau * grad)

        # 2) Dual: extrapolated ascent, then project onto the dual domain
        y = layout.project_dual(y + sigma * (K @ (2.0 * u_next - u) - c))
        u = u_next

        if k % ORACLE_CHECK_EVERY == 0 or k == max_iter:
            residuals = kkt_residuals(problem, _candidate(layout, u, y))
            if residuals.worst()[1] <= tol:
                return u, y, k, residuals
    raise OracleConvergenceError(max_iter, residuals, "primal-dual")


def _subgradient_run(problem, layout, projector, scale, tol, max_iter, check):
    K_con, c_con = layout.K[:layout.n_con], layout.c[:layout.n_con]
    u, y = _start(problem, layout, projector)
    y = y[:layout.n_con]
    residuals = None
    for k in range(1, max_iter + 1):
        step_size = scale / np.sqrt(k)
        x, _, _ = layout.split(u)
        grad = K_con.T @ y
        f_x = np.stack([subgradient(obj, xi) for obj, xi in zip(problem.objectives, x)])
        grad[:layout.nx] += f_x.ravel()
        u_next = _project_primal(layout, projector, u - step_size * grad)
        y = np.maximum(y + step_size * (K_con @ u - c_con), 0.0)
        u = u_next
        if check and (k % ORACLE_CHECK_EVERY == 0 or k == max_iter):
            residuals = kkt_residuals(problem, _candidate(layout, u, _pad(layout, y)))
            if residuals.worst()[1] <= tol:
                return u, y, k, residuals
    if check:
        raise OracleConvergenceError(max_iter, residuals, "subgradient")
    return u, y, max_iter, kkt_residuals(problem, _candidate(layout, u, _pad(layout, y)))


def _pad(layout, y_con):
    y = np.zeros(layout.K.shape[0])
    y[:layout.n_con] = y_con
    return y


def _solve_subgradient(problem, layout, projector, tol, max_iter):
    # Deterministic bracketing: score each c by its KKT residual after a short trial run
    trial = min(ORACLE_BRACKET_TRIAL_ITER, max_iter)
    scores = []
    for scale in ORACLE_STEP_BRACKET:
        _, _, _, res = _subgradient_run(problem, layout, projector, scale, tol, trial, check=False)
        worst = res.worst()[1]
        scores.append(worst if np.isfinite(worst) else np.inf)
    scale = ORACLE_STEP_BRACKET[int(np.argmin(scores))]
    logging.info("Subgradient oracle: step scale c=%g selected from %s", scale, ORACLE_STEP_BRACKET)
    u, y, k, res = _subgradient_run(problem, layout, projector, scale, tol, max_iter, check=True)
    return u, _pad(layout, y), k, res


def centralized_solve(problem, tol=ORACLE_TOLERANCE, max_iter=ORACLE_MAX_ITER, method="primal-dual"):
    """
    Solve the consensus-eliminated dual problem centrally.

    Args:
        problem: Validated RobustAllocationProblem (desk scale)
        tol: KKT self-check tolerance; the solver only returns points passing it
        max_iter: Iteration cap
        method: "primal-dual" (constant steps) or "subgradient" (c / sqrt(k))

    Returns:
        OracleSolution

    Raises:
        ConfigError: Unknown method or non-positive max_iter
        OracleConvergenceError: Self-check still failing after max_iter iterations
    """
    if method not in ORACLE_METHODS:
        raise ConfigError(f"unknown oracle method '{method}', choose from {ORACLE_METHODS}")
    if int(max_iter) < 1:
        raise ConfigError(f"max_iter must be at least 1, got {max_iter}")
    layout = _SaddleLayout(problem)
    projector = StackedProjector(problem.sets)
    solver = _solve_primal_dual if method == "primal-dual" else _solve_subgradient
    try:
        u, y, iterations, residuals = solver(problem, layout, projector, tol, int(max_iter))
    except OracleConvergenceError:
        logging.warning("Oracle (%s) failed to converge on '%s'", method, problem.name)
        raise

    x, z, w = layout.split(u)
    lam1, lam2 = layout.multipliers(y)
    logging.info("Oracle (%s) converged in %d iterations", method, iterations)
    return OracleSolution(
        x_star=x.copy(),
        z_star=z.copy(),
        W_star=w.copy(),
        lam1=lam1.copy(),
        lam2=lam2.copy(),
        objective_value=float(sum(objective_value(obj, xi) for obj, xi in zip(problem.objectives, x))),
        iterations=iterations,
        final_kkt=residuals,
        method=method,
        tolerance=float(tol),
    )


@dataclass(frozen=True)
class CrossValidationReport:
    passed: bool
    max_gap: float
    worst_agent: int
    worst_coordinate: int
    objective_gap: float = None


def cross_validate(final, oracle, tol, problem=None):
    """
    Compare a final swarm decision with the oracle optimum componentwise.

    Args:
        final: SwarmState or (n, q) decision array
        oracle: OracleSolution
        tol: Componentwise tolerance
        problem: Optional problem, needed for the objective-value gap

    Returns:
        CrossValidationReport naming the worst component (0-indexed)
    """
    x = np.asarray(getattr(final, "x", final), dtype=float).reshape(oracle.x_star.shape)
    gap = np.abs(x - oracle.x_star)
    worst = np.unravel_index(int(np.argmax(gap)), gap.shape) if gap.size else (0, 0)
    max_gap = float(gap.max(initial=0.0))
    objective_gap = None
    if problem is not None:
        value = sum(objective_value(obj, xi) for obj, xi in zip(problem.objectives, x))
        objective_gap = float(value - oracle.objective_value)
    return CrossValidationReport(
        passed=max_gap <= tol,
        max_gap=max_gap,
        worst_agent=int(worst[0]),
        worst_coordinate=int(worst[1]),
        objective_gap=objective_gap,
    )
