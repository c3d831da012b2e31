"""
Problem I/O Module
JSON codecs for problem instances, swarm states and oracle solutions
"""

import json
import os

import numpy as np

from robust_allocation.config import BUILTIN_DEMO, FORMAT_VERSION, STATE_CONSISTENCY_TOLERANCE
from robust_allocation.convex_geometry import StackedProjector
from robust_allocation.dynamics_engine import OUTPUT_BLOCKS, RAW_BLOCKS, SwarmState
from robust_allocation.errors import DimensionMismatchError, ProblemValidationError, StateValidationError
from robust_allocation.problem_model import (
    CommGraph,
    Finding,
    LocalSet,
    ObjectiveSpec,
    RobustAllocationProblem,
    UncertainConstraintData,
    demo_problem,
)

BUILTIN_PROBLEMS = {BUILTIN_DEMO: demo_problem}


def dumps(payload):
    """Byte-stable JSON text: fixed key order, two-space indent, trailing newline."""
    return json.dumps(payload, indent=2) + "\n"


def write_json(path, payload):
    with open(path, "w") as f:
        f.write(dumps(payload))


def _floats(values):
    return np.asarray(values, dtype=float).tolist()


def _set_to_dict(local_set):
    if local_set.kind == "ball":
        return {"type": "ball", "center": _floats(local_set.center), "radius": float(local_set.radius)}
    if local_set.kind == "box":
        return {"type": "box", "lower": _floats(local_set.lower), "upper": _floats(local_set.upper)}
    return {"type": local_set.kind}


def problem_to_dict(problem):
    data = problem.constraints
    agents = []
    for i in range(problem.n):
        agent = {
            "A": _floats(data.A[i]),
            "Ahat": _floats(data.Ahat[i]),
            "b": _floats(data.b[i]),
            "set": _set_to_dict(problem.sets[i]),
            "objective": {"type": problem.objectives[i].kind, "p": _floats(problem.objectives[i].p)},
        }
        if problem.initial_positions is not None:
            agent["x0"] = _floats(problem.initial_positions[i])
        agents.append(agent)
    payload = {
        "format_version": FORMAT_VERSION,
        "name": problem.name,
        "n": problem.n,
        "m": problem.m,
        "q": problem.q,
        "gamma": [int(g) for g in data.gamma],
        "agents": agents,
        "graph": {"adjacency": _floats(problem.graph.adjacency)},
    }
    if data.aggregate_b is not None:
        payload["aggregate_b"] = _floats(data.aggregate_b)
    return payload


def dumps_problem(problem):
    return dumps(problem_to_dict(problem))


def _require(data, key, path):
    if not isinstance(data, dict) or key not in data:
        raise ProblemValidationError(
            f"missing field '{key}'",
            [Finding("missing_field", f"{path}.{key}" if path else key, "required field is missing")],
        )
    return data[key]


def _array(value, shape, path):
    try:
        array = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ProblemValidationError(f"non-numeric data at {path}", [Finding("not_numeric", path, str(exc))]) from exc
    if array.size == 0 and 0 in shape:
        array = array.reshape(shape)
    if array.shape != shape:
        raise ProblemValidationError(
            f"wrong shape at {path}",
            [Finding("dimensions", path, f"expected shape {shape}, got {array.shape}")],
        )
    return array


def _set_from_dict(data, q, path):
    kind = _require(data, "type", path)
    if kind == "ball":
        return LocalSet.ball(_array(_require(data, "center", path), (q,), f"{path}.center"),
                             float(_require(data, "radius", path)))
    if kind == "box":
        return LocalSet.box(_array(_require(data, "lower", path), (q,), f"{path}.lower"),
                            _array(_require(data, "upper", path), (q,), f"{path}.upper"))
    if kind in ("nonneg", "whole"):
        return LocalSet(kind, q)
    raise ProblemValidationError(f"unknown set type at {path}", [Finding("set_kind", f"{path}.type", f"unknown set type '{kind}'")])


def problem_from_dict(data):
    """
    Parse a problem document.

    Raises:
        ProblemValidationError: With the JSON path of the first malformed field
    """
    version = _require(data, "format_version", "")
    if version != FORMAT_VERSION:
        raise ProblemValidationError(
            "unsupported format_version",
            [Finding("format_version", "format_version", f"expected {FORMAT_VERSION}, got {version!r}")],
        )
    n, m, q = (int(_require(data, key, "")) for key in ("n", "m", "q"))
    agents = _require(data, "agents", "")
    if not isinstance(agents, list) or len(agents) != n:
        raise ProblemValidationError("agent count mismatch", [Finding("dimensions", "agents", f"expected {n} agents")])
    gamma = _require(data, "gamma", "")
    if not isinstance(gamma, list) or len(gamma) != m:
        raise ProblemValidationError("budget count mismatch", [Finding("dimensions", "gamma", f"expected {m} budgets")])

    A, Ahat, b, sets, objectives, starts = [], [], [], [], [], []
    for i, agent in enumerate(agents):
        path = f"agents[{i}]"
        A.append(_array(_require(agent, "A", path), (m, q), f"{path}.A"))
        Ahat.append(_array(_require(agent, "Ahat", path), (m, q), f"{path}.Ahat"))
        b.append(_array(_require(agent, "b", path), (m, q), f"{path}.b"))
        sets.append(_set_from_dict(_require(agent, "set", path), q, f"{path}.set"))
        objective = _require(agent, "objective", path)
        objectives.append(ObjectiveSpec(
            _require(objective, "type", f"{path}.objective"),
            _array(_require(objective, "p", f"{path}.objective"), (q,), f"{path}.objective.p"),
        ))
        if "x0" in agent:
            starts.append(_array(agent["x0"], (q,), f"{path}.x0"))
    if starts and len(starts) != n:
        raise ProblemValidationError("partial initial positions", [Finding("dimensions", "agents[*].x0", "give x0 for every agent or none")])

    graph = _require(data, "graph", "")
    aggregate = data.get("aggregate_b")
    return RobustAllocationProblem(
        graph=CommGraph(_array(_require(graph, "adjacency", "graph"), (n, n), "graph.adjacency")),
        constraints=UncertainConstraintData(
            A=np.stack(A) if n else np.zeros((0, m, q)),
            Ahat=np.stack(Ahat) if n else np.zeros((0, m, q)),
            b=np.stack(b) if n else np.zeros((0, m, q)),
            gamma=tuple(gamma),
            aggregate_b=None if aggregate is None else _array(aggregate, (m, q), "aggregate_b"),
        ),
        sets=tuple(sets),
        objectives=tuple(objectives),
        initial_positions=np.stack(starts) if starts else None,
        name=str(data.get("name", "custom")),
    )


def loads_problem(text):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemValidationError("malformed JSON", [Finding("json", f"line {exc.lineno}", exc.msg)]) from exc
    return problem_from_dict(data)


def open_problem(source):
    """
    Resolve a problem from a builtin token or a JSON file path.

    Args:
        source: "builtin:demo" or a path to a problem document

    Returns:
        RobustAllocationProblem

    Raises:
        ProblemValidationError: If the file is missing or malformed
    """
    if source in BUILTIN_PROBLEMS:
        return BUILTIN_PROBLEMS[source]()
    if not os.path.isfile(source):
        raise ProblemValidationError(
            f"problem file not found: {source}\n"
            "Tips:\n"
            f"  1) Use '{BUILTIN_DEMO}' for the embedded demo instance\n"
            "  2) Write one with `python -m robust_allocation dump-demo > demo.json` and edit it\n"
            "  3) Check the path is relative to the current directory",
            [Finding("missing_file", "problem", source)],
        )
    with open(source) as f:
        return loads_problem(f.read())


def state_to_dict(state, label="state"):
    return {
        "format_version": FORMAT_VERSION,
        "kind": "swarm_state",
        "label": label,
        "n": int(state.x.shape[0]),
        "m": int(state.Z.shape[1]),
        "q": int(state.x.shape[1]),
        "raw": {name: _floats(getattr(state, name)) for name in RAW_BLOCKS},
        "outputs": {name: _floats(getattr(state, name)) for name in OUTPUT_BLOCKS},
    }


def state_from_dict(problem, data):
    """
    Parse a state dump and check it against the problem.

    Raises:
        DimensionMismatchError: Block shapes disagree with the problem
        StateValidationError: Outputs outside their sets or not the projection of raw blocks
    """
    if not isinstance(data, dict) or data.get("kind") != "swarm_state":
        raise StateValidationError("document is not a swarm_state dump")
    if data.get("format_version") != FORMAT_VERSION:
        raise StateValidationError(f"unsupported format_version {data.get('format_version')!r}")
    n, m, q = problem.n, problem.m, problem.q
    if (data.get("n"), data.get("m"), data.get("q")) != (n, m, q):
        raise DimensionMismatchError(
            f"state dimensions {(data.get('n'), data.get('m'), data.get('q'))} do not match problem {(n, m, q)}")

    def _block(section, name):
        expected = (n, q) if name in ("x_bar", "x") else (n, m, q)
        try:
            value = np.asarray(data[section][name], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise StateValidationError(f"missing or malformed block {section}.{name}") from exc
        if value.size == 0 and 0 in expected:
            value = value.reshape(expected)
        if value.shape != expected:
            raise DimensionMismatchError(f"{section}.{name} has shape {value.shape}, expected {expected}")
        return value

    raw = {name: _block("raw", name) for name in RAW_BLOCKS}
    outputs = {name: _block("outputs", name) for name in OUTPUT_BLOCKS}
    for name in ("Z", "W", "Lam1", "Lam2"):
        if np.any(outputs[name] < 0):
            raise StateValidationError(f"{name} must lie in the nonnegative orthant")

    state = SwarmState.from_raw(problem, projector=StackedProjector(problem.sets), **raw)
    for name in OUTPUT_BLOCKS:
        gap = np.max(np.abs(getattr(state, name) - outputs[name]), initial=0.0)
        if gap > STATE_CONSISTENCY_TOLERANCE * max(1.0, np.max(np.abs(outputs[name]), initial=0.0)):
            raise StateValidationError(f"output {name} is not the projection of its raw block (gap {gap:.3e})")
    return state


def load_state(problem, path):
    with open(path) as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise StateValidationError(f"malformed JSON in {path}: {exc.msg} (line {exc.lineno})") from exc
    return state_from_dict(problem, data)


def oracle_to_dict(solution):
    return {
        "format_version": FORMAT_VERSION,
        "kind": "oracle_solution",
        "method": solution.method,
        "tolerance": solution.tolerance,
        "iterations": solution.iterations,
        "objective_value": solution.objective_value,
        "x_star": _floats(solution.x_star),
        "z_star": _floats(solution.z_star),
        "W_star": _floats(solution.W_star),
        "lam1": _floats(solution.lam1),
        "lam2": _floats(solution.lam2),
        "final_kkt": solution.final_kkt.as_dict(),
    }
