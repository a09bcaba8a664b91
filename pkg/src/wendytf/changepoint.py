"""Two-segment piecewise-linear changepoint detection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DENOM_FLOOR = 1e-300


@dataclass(frozen=True)
class ChangepointResult:
    index: int
    x: float
    errors: np.ndarray  # E(k) for k = 1..n-2, stored at positions 1..n-2; NaN at the ends


def detect_changepoint(x, y) -> ChangepointResult:
    """Find the breakpoint k minimizing the relative misfit of two interpolating lines.

    Line one joins (x_0, y_0) and (x_k, y_k); line two joins (x_k, y_k) and
    (x_n, y_n). Residuals are relative to y. Ties go to the smallest k.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x)
    if n < 3 or len(y) != n:
        raise ValueError("need at least three points and matching lengths")
    if np.any(np.diff(x) <= 0):
        raise ValueError("x must be strictly increasing")
    denom = np.where(np.abs(y) < DENOM_FLOOR, np.where(y < 0, -DENOM_FLOOR, DENOM_FLOOR), y)

    errors = np.full(n, np.nan)
    idx = np.arange(n)
    for k in range(1, n - 1):
        s1 = (y[k] - y[0]) / (x[k] - x[0])
        s2 = (y[-1] - y[k]) / (x[-1] - x[k])
        fit = np.where(idx <= k, s1 * (x - x[0]) + y[0], s2 * (x - x[k]) + y[k])
        res = (fit - y) / denom
        # the shared point k belongs to both segments; its residual is zero in either
        errors[k] = np.sqrt(np.sum(res ** 2))
    k_c = int(np.nanargmin(errors))
    return ChangepointResult(k_c, float(x[k_c]), errors)
