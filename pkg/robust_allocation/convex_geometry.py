"""
Convex Geometry Module
Euclidean projections onto local sets and subgradient selections for the local objectives
"""

import numpy as np
from scipy.optimize import lsq_linear

from robust_allocation.errors import DimensionMismatchError


def project(target, u):
    """
    Euclidean projection onto a local set or the nonnegative orthant.

    Args:
        target: LocalSet (kind ball, box, nonneg or whole)
        u: Point of dimension target.dim

    Returns:
        Projected point as a new array
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (target.dim,):
        raise DimensionMismatchError(f"point of shape {u.shape} does not match set dimension {target.dim}")
    if target.kind == "nonneg":
        return np.maximum(u, 0.0)
    if target.kind == "box":
        return np.clip(u, target.lower, target.upper)
    if target.kind == "whole":
        return u.copy()
    if target.kind == "ball":
        offset = u - target.center
        dist = np.linalg.norm(offset)
        if dist <= target.radius:
            return u.copy()
        return target.center + offset * (target.radius / dist)
    raise ValueError(f"unknown set type '{target.kind}'")


def project_nonneg(u):
    return np.maximum(u, 0.0)


class StackedProjector:
    """
    Projects an (n, q) stack of agent points onto their local sets at once.

    Agents are grouped by set variant so each group is a single vectorized operation.
    """

    def __init__(self, sets):
        """Initialize projector from one LocalSet per agent."""
        kinds = np.array([s.kind for s in sets])
        self.n = len(sets)
        self._ball = np.flatnonzero(kinds == "ball")
        self._box = np.flatnonzero(kinds == "box")
        self._nonneg = np.flatnonzero(kinds == "nonneg")
        if self._ball.size:
            self._centers = np.stack([sets[i].center for i in self._ball])
            self._radii = np.array([sets[i].radius for i in self._ball])
        if self._box.size:
            self._lower = np.stack([sets[i].lower for i in self._box])
            self._upper = np.stack([sets[i].upper for i in self._box])

    def project(self, points):
        points = np.asarray(points, dtype=float)
        if points.shape[0] != self.n:
            raise DimensionMismatchError(f"expected {self.n} agent points, got {points.shape[0]}")
        out = points.copy()
        if self._ball.size:
            ball_pts = points[self._ball]
            offset = ball_pts - self._centers
            dist = np.linalg.norm(offset, axis=1)
            inside = dist <= self._radii
            scale = self._radii / np.where(inside, 1.0, dist)
            out[self._ball] = np.where(inside[:, None], ball_pts, self._centers + offset * scale[:, None])
        if self._box.size:
            out[self._box] = np.clip(points[self._box], self._lower, self._upper)
        if self._nonneg.size:
            out[self._nonneg] = np.maximum(points[self._nonneg], 0.0)
        return out


def objective_value(objective, x):
    x = np.asarray(x, dtype=float)
    diff = x - objective.p
    if objective.kind == "quadratic":
        return float(diff @ diff)
    if objective.kind == "quadratic_plus_l1":
        return float(diff @ diff + np.abs(x).sum())
    if objective.kind == "l2norm":
        return float(np.linalg.norm(diff))
    raise ValueError(f"unknown objective '{objective.kind}'")


def subgradient(objective, x, offset=None, kink_tolerance=0.0):
    """
    Deterministic element of the subdifferential of a local objective.

    Without an offset the selection is sign(x) on the l1 part (0 at kinks) and 0 at
    the apex of l2norm. With an offset c, kinks pick the element s of the
    subdifferential that minimizes ||s + c||. Coordinates with |x_l| <= kink_tolerance
    count as kinks, so the selection ranges over the epsilon-subdifferential there.

    Args:
        objective: ObjectiveSpec
        x: Evaluation point
        offset: Optional vector c added to the subgradient by the caller
        kink_tolerance: Width of the band treated as a kink (offset only)

    Returns:
        Subgradient vector (the offset itself is not included)
    """
    x = np.asarray(x, dtype=float)
    diff = x - objective.p
    if objective.kind == "quadratic":
        return 2.0 * diff
    if objective.kind == "quadratic_plus_l1":
        grad = 2.0 * diff
        sign = np.sign(x)
        if offset is not None:
            kink = np.abs(x) <= kink_tolerance
            sign = np.where(kink, np.clip(-(grad + offset), -1.0, 1.0), sign)
        return grad + sign
    if objective.kind == "l2norm":
        dist = np.linalg.norm(diff)
        if dist > 0:
            return diff / dist
        if offset is None:
            return np.zeros_like(x)
        size = np.linalg.norm(offset)
        # apex: the unit ball is the subdifferential
        return -offset if size <= 1.0 else -offset / size
    raise ValueError(f"unknown objective '{objective.kind}'")


def normal_cone_generators(target, x, tolerance=0.0):
    """
    Columns spanning the normal cone of the target at x as a conic hull.

    Constraints within `tolerance` of being active contribute a generator: the outer
    radius direction of a ball, +/- e_l for box bounds, -e_l for the orthant.

    Returns:
        (dim, k) array, k = 0 in the interior and for the whole space
    """
    x = np.asarray(x, dtype=float)
    eye = np.eye(target.dim)
    if target.kind == "ball":
        offset = x - target.center
        dist = np.linalg.norm(offset)
        if dist > 0 and dist >= target.radius - tolerance:
            return (offset / dist)[:, None]
        return np.zeros((target.dim, 0))
    if target.kind == "box":
        return np.hstack([eye[:, x >= target.upper - tolerance], -eye[:, x <= target.lower + tolerance]])
    if target.kind == "nonneg":
        return -eye[:, x <= tolerance]
    if target.kind == "whole":
        return np.zeros((target.dim, 0))
    raise ValueError(f"unknown set type '{target.kind}'")


def stationary_subgradient(objective, target, x, offset, kink_tolerance=0.0):
    """
    Subgradient g for which -(g + offset) comes closest to the normal cone at x.

    l1 kink coordinates (|x_l| <= kink_tolerance) and the normal-cone multipliers
    are chosen together by bounded least squares, so an optimum whose kink lies on
    the boundary of the local set certifies. Without kinks this is subgradient().

    Args:
        objective: ObjectiveSpec
        target: LocalSet containing x
        x: Evaluation point
        offset: Coupling pull added to the subgradient by the caller
        kink_tolerance: Width of the band treated as a kink

    Returns:
        Subgradient vector (offset not included)
    """
    x = np.asarray(x, dtype=float)
    offset = np.asarray(offset, dtype=float)
    if objective.kind != "quadratic_plus_l1":
        return subgradient(objective, x, offset=offset)
    kink = np.abs(x) <= kink_tolerance
    if not kink.any():
        return subgradient(objective, x)

    fixed = 2.0 * (x - objective.p) + np.where(kink, 0.0, np.sign(x))
    cone = normal_cone_generators(target, x, kink_tolerance)
    kink_cols = np.eye(x.size)[:, kink]
    n_kink, n_cone = kink_cols.shape[1], cone.shape[1]
    # s_kink in [-1, 1], cone weights >= 0; solve s + N t = -(fixed + offset)
    fit = lsq_linear(
        np.hstack([kink_cols, cone]),
        -(fixed + offset),
        bounds=(np.r_[-np.ones(n_kink), np.zeros(n_cone)], np.r_[np.ones(n_kink), np.full(n_cone, np.inf)]),
        method="bvls",
    )
    return fixed + kink_cols @ fit.x[:n_kink]


def projection_variational_residual(target, u, v_candidate):
    """
    Normal-cone membership residual ||P(x + v) - x|| with x = P(u).

    Zero exactly when v_candidate lies in the normal cone of the target at x.
    """
    x = project(target, u)
    return float(np.linalg.norm(project(target, x + np.asarray(v_candidate, dtype=float)) - x))
