"""
Error Types Module
Exception hierarchy shared by the solver, the oracle and the CLI
"""


class RobustAllocationError(Exception):
    """Base class for every error raised by this package."""


class ProblemValidationError(RobustAllocationError):
    """
    A problem instance or its JSON document is malformed.

    Carries the itemized findings so callers can print field paths.
    """

    def __init__(self, message, findings=()):
        super().__init__(message)
        self.findings = tuple(findings)

    def __str__(self):
        lines = [super().__str__()]
        for finding in self.findings:
            lines.append(f"  - {finding.field}: {finding.message}")
        return "\n".join(lines)


class DimensionMismatchError(RobustAllocationError, ValueError):
    """Array shapes disagree with the problem dimensions."""


class BudgetRangeError(RobustAllocationError, ValueError):
    """Budget outside [0, n] or enumeration guard exceeded."""


class ConfigError(RobustAllocationError, ValueError):
    """Invalid integrator or command-line configuration."""


class StateValidationError(RobustAllocationError):
    """A state dump breaks the output-projection invariant."""


class DivergenceError(RobustAllocationError):
    """Non-finite values appeared while integrating the dynamics."""

    def __init__(self, block, t=None):
        self.block = block
        self.t = t
        where = f" at t={t:.6g}" if t is not None else ""
        super().__init__(f"non-finite values in block '{block}'{where}")


class OracleConvergenceError(RobustAllocationError):
    """The centralized solver did not pass its KKT self-check within max_iter."""

    def __init__(self, iterations, residuals=None, method=None):
        self.iterations = iterations
        self.residuals = residuals
        self.method = method
        worst = ""
        if residuals is not None:
            name, value = residuals.worst()
            worst = f"; worst residual {name}={value:.3e}"
        super().__init__(f"oracle ({method}) did not converge after {iterations} iterations{worst}")
