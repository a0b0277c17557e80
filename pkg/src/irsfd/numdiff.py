"""Central-difference gradient oracle and gradient-check report.

Kept deliberately independent of the analytic/autodiff gradient paths it
validates: plain loops, no shared helpers. Complex parameters are checked
through their real and imaginary parts as separate real coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


def central_diff(f: Callable[[np.ndarray], float], x: np.ndarray,
                 h: float) -> np.ndarray:
    """Per-coordinate central difference (f(x + h e_i) - f(x - h e_i)) / 2h."""
    if h <= 0:
        raise ValueError("step size h must be positive")
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(x.size):
        step = np.zeros_like(x)
        step.flat[i] = h
        fp = f(x + step)
        fm = f(x - step)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"function not finite near coordinate {i}")
        grad.flat[i] = (fp - fm) / (2.0 * h)
    return grad


@dataclass
class GradCheckReport:
    """Outcome of an analytic-vs-numeric gradient comparison."""

    max_rel_err: float
    mean_rel_err: float
    worst_index: int
    h: float
    passed: bool


def grad_check(analytic: np.ndarray | Callable[[np.ndarray], np.ndarray],
               f: Callable[[np.ndarray], float], x: np.ndarray, h: float,
               tol: float, eps: float = 1e-8) -> GradCheckReport:
    """Compare an analytic gradient against central differences.

    Per-coordinate error metric: |a - n| / (|a| + |n| + eps); eps keeps the
    ratio meaningful at coordinates whose true gradient is numerically zero.
    """
    a = np.asarray(analytic(x) if callable(analytic) else analytic, dtype=float)
    n = central_diff(f, x, h)
    rel = np.abs(a - n) / (np.abs(a) + np.abs(n) + eps)
    worst = int(np.argmax(rel))
    return GradCheckReport(
        max_rel_err=float(rel.max()),
        mean_rel_err=float(rel.mean()),
        worst_index=worst,
        h=h,
        passed=bool(rel.max() <= tol),
    )
