"""
Report View Module
Formats certification, validation and cross-validation results as text tables
"""

import numpy as np


def _status(value, tolerance):
    if not np.isfinite(value):
        return "n/a"
    return "OK" if value <= tolerance else "FAIL"


def format_certification(report, tolerance):
    """
    Render a CertificationReport.

    Args:
        report: CertificationReport
        tolerance: Tolerance applied to the KKT and equilibrium residuals

    Returns:
        Multi-line string
    """
    lines = [f"{'residual':<24}{'value':>14}  status", "-" * 46]
    for name, value in report.kkt.as_dict().items():
        lines.append(f"{name:<24}{value:>14.3e}  {_status(value, tolerance)}")
    lines.append(f"{'eq_residual':<24}{report.eq_residual:>14.3e}  {_status(report.eq_residual, tolerance)}")
    lines.append("-" * 46)
    for label, value in zip(("cons_Z", "cons_L1", "cons_L2"), report.consensus):
        lines.append(f"{label:<24}{value:>14.3e}")
    lines.append(f"{'max G1':<24}{np.max(report.feasibility.G1, initial=-np.inf):>14.3e}")
    lines.append(f"{'max G2':<24}{np.max(report.feasibility.G2, initial=-np.inf):>14.3e}")
    lines.append(f"{'max robust primal':<24}{np.max(report.feasibility.robust_primal, initial=-np.inf):>14.3e}")
    return "\n".join(lines)


def format_validation(report):
    if not report.findings:
        return "validation: pass (no findings)"
    head = "validation: pass" if report.passed else "validation: FAIL"
    lines = [head]
    for finding in report.findings:
        lines.append(f"  [{finding.severity.upper()}] {finding.code} at {finding.field}: {finding.message}")
    return "\n".join(lines)


def format_positions(x, label="x"):
    return "\n".join(f"  {label}_{i + 1} = [{', '.join(f'{v:.4f}' for v in row)}]" for i, row in enumerate(np.asarray(x)))


def format_cross_validation(report, tolerance):
    verdict = "pass" if report.passed else "FAIL"
    line = (f"cross-validation: {verdict} (max gap {report.max_gap:.3e} at agent {report.worst_agent + 1}, "
            f"coordinate {report.worst_coordinate + 1}; tol {tolerance:g})")
    if report.objective_gap is not None:
        line += f", objective gap {report.objective_gap:.3e}"
    return line
