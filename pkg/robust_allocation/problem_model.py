"""
Problem Model Module
Robust allocation instances, communication graphs, Laplacians and assumption checks
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from absl import logging
from scipy import sparse
from scipy.sparse import csgraph

from robust_allocation.config import (
    DEMO_AGENTS,
    DEMO_AGGREGATE_B,
    DEMO_B,
    DEMO_BALL_RADIUS,
    DEMO_GAMMA,
    DEMO_INITIAL_POSITIONS,
)
from robust_allocation.errors import DimensionMismatchError, ProblemValidationError
from robust_allocation import robust_counterpart

SET_KINDS = ("ball", "box", "nonneg", "whole")
OBJECTIVE_KINDS = ("quadratic", "quadratic_plus_l1", "l2norm")


@dataclass(frozen=True)
class Finding:
    """One itemized validation finding."""

    code: str
    field: str
    message: str
    severity: str = "error"


@dataclass(frozen=True)
class ValidationReport:
    findings: tuple = ()

    @property
    def errors(self):
        return tuple(f for f in self.findings if f.severity == "error")

    @property
    def warnings(self):
        return tuple(f for f in self.findings if f.severity == "warning")

    @property
    def passed(self):
        return not self.errors

    def codes(self):
        return {f.code for f in self.findings}

    def raise_if_failed(self):
        if not self.passed:
            raise ProblemValidationError("problem failed validation", self.errors)


@dataclass(frozen=True, eq=False)
class CommGraph:
    """Undirected weighted communication graph given by its adjacency matrix."""

    adjacency: np.ndarray

    def __post_init__(self):
        adjacency = np.asarray(self.adjacency, dtype=float)
        if adjacency.ndim != 2 or adjacency.shape[0] != adjacency.shape[1]:
            raise DimensionMismatchError(f"adjacency must be square, got shape {adjacency.shape}")
        object.__setattr__(self, "adjacency", adjacency)

    @property
    def n(self):
        return self.adjacency.shape[0]

    @classmethod
    def path(cls, n, weight=1.0):
        adjacency = np.zeros((n, n))
        for i in range(n - 1):
            adjacency[i, i + 1] = adjacency[i + 1, i] = weight
        return cls(adjacency)

    @classmethod
    def complete(cls, n, weight=1.0):
        return cls(weight * (np.ones((n, n)) - np.eye(n)))

    def is_connected(self):
        if self.n <= 1:
            return True
        count, _ = csgraph.connected_components(sparse.csr_matrix(self.adjacency > 0), directed=False)
        return count == 1


@dataclass(frozen=True, eq=False)
class Laplacian:
    """
    Graph Laplacian L = D - A.

    Features:
    - Dense n x n matrix for blockwise application on (n, ...) arrays
    - Sparse Kronecker lift L (x) I_block for stacked vectors
    """

    matrix: np.ndarray

    @property
    def n(self):
        return self.matrix.shape[0]

    def lifted(self, block):
        """
        Kronecker lift of the Laplacian.

        Args:
            block: Size of the identity block (m*q for Z and the multipliers)

        Returns:
            scipy.sparse CSR matrix of shape (n*block, n*block)
        """
        if block == 0:
            return sparse.csr_matrix((0, 0))
        return sparse.kron(sparse.csr_matrix(self.matrix), sparse.identity(block), format="csr")

    def apply(self, blocks):
        """Apply L across the leading (agent) axis of an (n, ...) array."""
        blocks = np.asarray(blocks, dtype=float)
        if blocks.shape[0] != self.n:
            raise DimensionMismatchError(f"expected {self.n} agent blocks, got {blocks.shape[0]}")
        return (self.matrix @ blocks.reshape(self.n, -1)).reshape(blocks.shape)

    @cached_property
    def pseudo_inverse(self):
        return np.linalg.pinv(self.matrix)


def _adjacency_findings(adjacency):
    findings = []
    if not np.all(np.isfinite(adjacency)):
        findings.append(Finding("adjacency_finite", "graph.adjacency", "entries must be finite"))
    if not np.array_equal(adjacency, adjacency.T):
        findings.append(Finding("adjacency_symmetric", "graph.adjacency", "matrix must be symmetric"))
    if np.any(adjacency < 0):
        findings.append(Finding("adjacency_nonnegative", "graph.adjacency", "weights must be nonnegative"))
    if np.any(np.diag(adjacency) != 0):
        findings.append(Finding("adjacency_diagonal", "graph.adjacency", "diagonal must be zero"))
    return findings


def build_laplacian(graph):
    """
    Build L = D - A for an undirected graph.

    Args:
        graph: CommGraph with symmetric, nonnegative, zero-diagonal adjacency

    Returns:
        Laplacian

    Raises:
        ProblemValidationError: If the adjacency breaks one of the preconditions
    """
    findings = _adjacency_findings(graph.adjacency)
    if findings:
        raise ProblemValidationError("invalid adjacency matrix", findings)
    degree = graph.adjacency.sum(axis=1)
    return Laplacian(np.diag(degree) - graph.adjacency)


@dataclass(frozen=True, eq=False)
class LocalSet:
    """
    Closed convex local constraint set of one agent.

    Variants: ball(center, radius), box(lower, upper), nonneg, whole.
    The nonneg variant doubles as the orthant target for Z, W and the multipliers.
    """

    kind: str
    dim: int
    center: np.ndarray = None
    radius: float = None
    lower: np.ndarray = None
    upper: np.ndarray = None

    @classmethod
    def ball(cls, center, radius):
        center = np.asarray(center, dtype=float)
        return cls("ball", center.shape[0], center=center, radius=float(radius))

    @classmethod
    def box(cls, lower, upper):
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        return cls("box", lower.shape[0], lower=lower, upper=upper)

    @classmethod
    def nonneg(cls, dim):
        return cls("nonneg", int(dim))

    @classmethod
    def whole(cls, dim):
        return cls("whole", int(dim))

    def findings(self, path):
        if self.kind not in SET_KINDS:
            return [Finding("set_kind", f"{path}.type", f"unknown set type '{self.kind}'")]
        found = []
        if self.kind == "ball":
            if self.center.shape != (self.dim,) or not np.all(np.isfinite(self.center)):
                found.append(Finding("set_center", f"{path}.center", "center must be a finite vector"))
            if not (np.isfinite(self.radius) and self.radius > 0):
                found.append(Finding("set_radius", f"{path}.radius", "radius must be positive"))
        elif self.kind == "box":
            if self.lower.shape != self.upper.shape:
                found.append(Finding("set_bounds", path, "lower and upper differ in length"))
            elif np.any(self.lower > self.upper) or np.any(np.isnan(self.lower)) or np.any(np.isnan(self.upper)):
                found.append(Finding("set_bounds", path, "lower must not exceed upper"))
        return found

    def default_point(self):
        """Center of a ball, otherwise the projection of the origin."""
        if self.kind == "ball":
            return self.center.copy()
        if self.kind == "box":
            return np.clip(np.zeros(self.dim), self.lower, self.upper)
        return np.zeros(self.dim)


@dataclass(frozen=True, eq=False)
class ObjectiveSpec:
    """Local objective f_i: quadratic, quadratic_plus_l1 or l2norm around p."""

    kind: str
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))

    @property
    def strictly_convex(self):
        return self.kind in ("quadratic", "quadratic_plus_l1")


@dataclass(frozen=True, eq=False)
class UncertainConstraintData:
    """
    Uncertain coupling constraints in diagonal form.

    A, Ahat and b are (n, m, q) arrays: A[i, j] holds the diagonal of A_ij,
    b[i, j] is agent i's share of resource j. gamma holds one integer budget per resource.
    """

    A: np.ndarray
    Ahat: np.ndarray
    b: np.ndarray
    gamma: tuple
    aggregate_b: np.ndarray = None

    def __post_init__(self):
        for name in ("A", "Ahat", "b"):
            value = np.asarray(getattr(self, name), dtype=float)
            if value.ndim != 3:
                raise DimensionMismatchError(f"{name} must be an (n, m, q) array, got shape {value.shape}")
            object.__setattr__(self, name, value)
        object.__setattr__(self, "gamma", tuple(self.gamma))
        if self.aggregate_b is not None:
            object.__setattr__(self, "aggregate_b", np.asarray(self.aggregate_b, dtype=float))

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.A.shape[1]

    @property
    def q(self):
        return self.A.shape[2]

    @property
    def gamma_array(self):
        return np.asarray(self.gamma, dtype=float).reshape(-1)

    @property
    def b_total(self):
        """Aggregate right-hand side b_j = sum_i b_ij, shape (m, q)."""
        return self.b.sum(axis=0)


@dataclass(frozen=True, eq=False)
class RobustAllocationProblem:
    """
    Distributed robust resource allocation instance.

    Features:
    - Communication graph and its Laplacian (cached)
    - Uncertain coupling constraints with per-resource budgets
    - Per-agent local sets and objectives
    - Optional per-agent initial positions used by default_init
    """

    graph: CommGraph
    constraints: UncertainConstraintData
    sets: tuple
    objectives: tuple
    initial_positions: np.ndarray = None
    name: str = field(default="custom")

    def __post_init__(self):
        object.__setattr__(self, "sets", tuple(self.sets))
        object.__setattr__(self, "objectives", tuple(self.objectives))
        if self.initial_positions is not None:
            object.__setattr__(self, "initial_positions", np.asarray(self.initial_positions, dtype=float))

    @property
    def n(self):
        return self.constraints.n

    @property
    def m(self):
        return self.constraints.m

    @property
    def q(self):
        return self.constraints.q

    @cached_property
    def laplacian(self):
        return build_laplacian(self.graph)

    def start_positions(self):
        """Configured initial positions, or each set's default point."""
        if self.initial_positions is not None:
            return self.initial_positions.copy()
        return np.stack([s.default_point() for s in self.sets]) if self.sets else np.zeros((0, self.q))


def _dimension_findings(problem):
    n, m, q = problem.n, problem.m, problem.q
    found = []
    if problem.graph.n != n:
        found.append(Finding("dimensions", "graph.adjacency", f"graph has {problem.graph.n} nodes, constraints have {n} agents"))
    for name in ("Ahat", "b"):
        shape = getattr(problem.constraints, name).shape
        if shape != (n, m, q):
            found.append(Finding("dimensions", f"constraints.{name}", f"shape {shape} != {(n, m, q)}"))
    if len(problem.constraints.gamma) != m:
        found.append(Finding("dimensions", "gamma", f"expected {m} budgets, got {len(problem.constraints.gamma)}"))
    if len(problem.sets) != n:
        found.append(Finding("dimensions", "agents", f"expected {n} local sets, got {len(problem.sets)}"))
    if len(problem.objectives) != n:
        found.append(Finding("dimensions", "agents", f"expected {n} objectives, got {len(problem.objectives)}"))
    for i, local_set in enumerate(problem.sets):
        if local_set.dim != q:
            found.append(Finding("dimensions", f"agents[{i}].set", f"set dimension {local_set.dim} != q={q}"))
    for i, objective in enumerate(problem.objectives):
        if objective.p.shape != (q,):
            found.append(Finding("dimensions", f"agents[{i}].objective.p", f"p must have length {q}"))
    if problem.initial_positions is not None and problem.initial_positions.shape != (n, q):
        found.append(Finding("dimensions", "agents[*].x0", f"initial positions must be {n} x {q}"))
    aggregate = problem.constraints.aggregate_b
    if aggregate is not None and aggregate.shape != (m, q):
        found.append(Finding("dimensions", "aggregate_b", f"shape {aggregate.shape} != {(m, q)}"))
    return found


def _slater_certified(problem):
    """Look for a strictly feasible point among the start positions and set centers."""
    candidates = [problem.start_positions(), np.stack([s.default_point() for s in problem.sets])]
    for x in candidates:
        margins = robust_counterpart.aggregated_margin(problem, x)
        if margins.size == 0 or np.all(margins < 0):
            return True
    return False


def validate_problem(problem):
    """
    Check the standing assumptions of a problem instance.

    Never raises for findings; the caller decides what to do with the report.

    Args:
        problem: RobustAllocationProblem

    Returns:
        ValidationReport with itemized findings
    """
    findings = _dimension_findings(problem)
    if findings:
        return ValidationReport(tuple(findings))

    # 1) Graph: well-formed adjacency and connectivity
    findings.extend(_adjacency_findings(problem.graph.adjacency))
    if not problem.graph.is_connected():
        findings.append(Finding("connectivity", "graph.adjacency", "communication graph is not connected"))

    # 2) Local sets and objectives
    for i, local_set in enumerate(problem.sets):
        findings.extend(local_set.findings(f"agents[{i}].set"))
    for i, objective in enumerate(problem.objectives):
        path = f"agents[{i}].objective"
        if objective.kind not in OBJECTIVE_KINDS:
            findings.append(Finding("objective_kind", f"{path}.type", f"unknown objective '{objective.kind}'"))
        elif not objective.strictly_convex:
            findings.append(Finding("strict_convexity", f"{path}.type", f"'{objective.kind}' is convex but not strictly convex"))

    # 3) Uncertainty data
    data = problem.constraints
    for name in ("A", "Ahat", "b"):
        if not np.all(np.isfinite(getattr(data, name))):
            findings.append(Finding("finite", f"constraints.{name}", "entries must be finite"))
    for i, j in zip(*np.nonzero(np.any(data.Ahat < 0, axis=2))):
        findings.append(Finding("ahat_nonnegative", f"agents[{i}].Ahat[{j}]", "deviations must be nonnegative"))
    for j, gamma in enumerate(data.gamma):
        if isinstance(gamma, bool) or not isinstance(gamma, (int, np.integer)):
            findings.append(Finding("budget_integer", f"gamma[{j}]", f"budget {gamma!r} is not an integer"))
        elif not 0 <= gamma <= problem.n:
            findings.append(Finding("budget_range", f"gamma[{j}]", f"budget {gamma} outside [0, {problem.n}]"))
    if data.aggregate_b is not None and not np.allclose(data.b_total, data.aggregate_b, rtol=0.0, atol=1e-12):
        findings.append(Finding("aggregate_b", "aggregate_b", "per-agent shares do not sum to the aggregate"))

    # 4) Slater: warn only
    if not any(f.severity == "error" for f in findings) and not _slater_certified(problem):
        findings.append(Finding(
            "slater_uncertified", "constraints",
            "no strictly feasible point found among start positions and set centers; check Slater manually",
            severity="warning",
        ))
        logging.warning("Slater condition not certified for problem '%s'", problem.name)

    return ValidationReport(tuple(findings))


def demo_problem():
    """
    Build the four-agent demo instance.

    Returns:
        RobustAllocationProblem with n=4, m=2, q=2, gamma=(2, 2), ball sets of radius 30
        around the initial positions and quadratic_plus_l1 objectives with p_i = [i, -i]
    """
    n, q = DEMO_AGENTS, 2
    A = np.zeros((n, 2, q))
    Ahat = np.zeros((n, 2, q))
    for i in range(n):
        nominal = (i + 1) / 10
        deviation = (n + 1 - (i + 1)) / 10
        A[i, 0] = nominal
        Ahat[i, 0] = deviation
        A[i, 1] = deviation
        Ahat[i, 1] = nominal
    positions = np.array(DEMO_INITIAL_POSITIONS)
    return RobustAllocationProblem(
        graph=CommGraph.path(n),
        constraints=UncertainConstraintData(
            A=A, Ahat=Ahat, b=np.array(DEMO_B), gamma=DEMO_GAMMA,
            aggregate_b=np.array(DEMO_AGGREGATE_B),
        ),
        sets=tuple(LocalSet.ball(x0, DEMO_BALL_RADIUS) for x0 in positions),
        objectives=tuple(ObjectiveSpec("quadratic_plus_l1", [i + 1, -(i + 1)]) for i in range(n)),
        initial_positions=positions,
        name="demo",
    )
