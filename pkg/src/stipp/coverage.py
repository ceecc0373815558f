"""Deterministic coverage tours used as survey baselines."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["CoveragePlan", "circular_coverage", "lemniscate_coverage", "polyline_length"]


@dataclass(frozen=True, eq=False)
class CoveragePlan:
    waypoints: np.ndarray  # (n, 2)
    pattern: str
    total_length: float

    def max_gap(self) -> float:
        if len(self.waypoints) < 2:
            return 0.0
        return float(np.hypot(*np.diff(self.waypoints, axis=0).T).max())


def polyline_length(points) -> float:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) < 2:
        return 0.0
    return float(np.hypot(*np.diff(pts, axis=0).T).sum())


def _check(budget_length: float, n_waypoints: int):
    if not budget_length > 0:
        raise ValueError(f"budget_length must be > 0, got {budget_length}")
    if n_waypoints < 1:
        raise ValueError(f"n_waypoints must be >= 1, got {n_waypoints}")


def _check_gap(plan: CoveragePlan, max_step: float | None) -> CoveragePlan:
    if max_step is not None and plan.max_gap() > max_step + 1e-9:
        raise ValueError(
            f"waypoint gap {plan.max_gap():.3f} exceeds max_step {max_step}; "
            "use more waypoints or a smaller budget")
    return plan


def circular_coverage(bounds, budget_length: float, n_waypoints: int,
                      radius_factor: float = 0.35, max_step: float | None = None) -> CoveragePlan:
    """Equally spaced waypoints on a circle centred in ``bounds``.

    Consecutive chords are sized so the tour uses the whole budget; when the
    budget exceeds one circumference the tour wraps and revisits the circle.
    """
    _check(budget_length, n_waypoints)
    x0, x1, y0, y1 = bounds
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    r = radius_factor * min(x1 - x0, y1 - y0)
    if n_waypoints == 1:
        return CoveragePlan(np.array([[cx + r, cy]]), "circle", 0.0)
    chord = min(budget_length / (n_waypoints - 1), 2 * r)
    dtheta = 2 * math.asin(chord / (2 * r))
    theta = dtheta * np.arange(n_waypoints)
    wp = np.column_stack([cx + r * np.cos(theta), cy + r * np.sin(theta)])
    length = polyline_length(wp)
    if length > budget_length:
        # rounding in asin; shave the step
        theta *= budget_length / length
        wp = np.column_stack([cx + r * np.cos(theta), cy + r * np.sin(theta)])
        length = polyline_length(wp)
    return _check_gap(CoveragePlan(wp, "circle", length), max_step)


def _lemniscate(s: np.ndarray, a: float, cx: float, cy: float) -> np.ndarray:
    d = 1.0 + np.sin(s) ** 2
    return np.column_stack([cx + a * np.cos(s) / d, cy + a * np.sin(s) * np.cos(s) / d])


def lemniscate_coverage(bounds, budget_length: float, n_waypoints: int,
                        scale: float = 0.45, max_step: float | None = None) -> CoveragePlan:
    """Parameter-uniform waypoints on an axis-aligned Bernoulli lemniscate.

    The tour starts at the centre (the crossing point) and covers one full
    period when the budget allows; otherwise the parameter step shrinks until
    the polyline fits the budget.
    """
    _check(budget_length, n_waypoints)
    x0, x1, y0, y1 = bounds
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    a = scale * min(x1 - x0, y1 - y0)
    s0 = 0.5 * math.pi
    if n_waypoints == 1:
        return CoveragePlan(_lemniscate(np.array([s0]), a, cx, cy), "lemniscate", 0.0)
    k = np.arange(n_waypoints)

    def build(ds):
        return _lemniscate(s0 + ds * k, a, cx, cy)

    ds = 2 * math.pi / (n_waypoints - 1)
    wp = build(ds)
    if polyline_length(wp) > budget_length:
        lo, hi = 0.0, ds
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            if polyline_length(build(mid)) <= budget_length:
                lo = mid
            else:
                hi = mid
        wp = build(lo)
    return _check_gap(CoveragePlan(wp, "lemniscate", polyline_length(wp)), max_step)
