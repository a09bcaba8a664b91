"""Test-function set construction: Single-scale-Local and Multi-scale-Global."""

from __future__ import annotations

import json
import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .changepoint import detect_changepoint
from .grid import Trajectory
from .integration_error import (
    VALUE_FLOOR,
    CurveKind,
    ErrorCurve,
    EulerMaclaurinConfig,
    correlate_translates,
    ehat_curve,
    radius_grid,
)
from .testfunctions import (
    ReferenceFunction,
    TestFunctionBasis,
    admissible_centers,
    build_basis,
    sampled_kernel,
)

log = logging.getLogger(__name__)

MG_SCALES = (1, 2, 4, 8)
DEFAULT_COARSENING = 4.0


class SelectionError(ValueError):
    pass


@dataclass
class SlSelection:
    r_hat_c: float
    curve: ErrorCurve = field(repr=False)
    basis: TestFunctionBasis = field(repr=False)
    degenerate: bool = False
    walltime_ms: float = 0.0

    def to_dict(self, curve_csv_path=None) -> dict:
        return {
            "method": "SL",
            "r_hat_c": self.r_hat_c,
            "K": self.basis.K,
            "walltime_ms": self.walltime_ms,
            "curve_csv_path": None if curve_csv_path is None else str(curve_csv_path),
            "degenerate": bool(self.degenerate),
        }


def _is_constant(data: Trajectory) -> bool:
    return bool(np.all(np.ptp(data.values, axis=0) == 0))


def sl_select(data: Trajectory, p: int = 16, cfg: EulerMaclaurinConfig = EulerMaclaurinConfig(),
              stride: int = 1) -> SlSelection:
    """Pick the radius at the changepoint of the log estimated integration error."""
    grid = data.grid
    if grid.M < 8:
        raise SelectionError("single-scale selection needs M >= 8")
    t0 = time.perf_counter()
    curve = ehat_curve(data, p, cfg, stride=stride)
    degenerate = _is_constant(data) or bool(np.all(curve.values <= VALUE_FLOOR)) \
        or np.ptp(curve.log_values()) == 0
    if degenerate:
        warnings.warn("flat error curve; falling back to the smallest radius", RuntimeWarning, stacklevel=2)
        r = float(curve.radii[0])
    else:
        r = float(detect_changepoint(curve.radii, curve.log_values()).x)
    basis = build_basis(ReferenceFunction.poly(r, p), grid, stride)
    return SlSelection(r, curve, basis, bool(degenerate), 1e3 * (time.perf_counter() - t0))


def _mg_mode(M: int, s: float) -> int:
    if not 2 <= s <= 4:
        raise SelectionError("coarsening factor must lie in [2, 4]")
    n = int(math.floor(M / s))
    if 2 * n == M:
        warnings.warn("coarse mode is the Nyquist mode; its imaginary part vanishes for real data",
                      RuntimeWarning, stacklevel=3)
    return n


def _phase(grid, n: int) -> np.ndarray:
    return np.exp(-2j * np.pi * n * np.arange(grid.M + 1) / grid.M)


def _rms(coef: np.ndarray, T: float, K: int) -> float:
    e = -(4 * np.pi / math.sqrt(T)) * coef.imag
    return float(math.sqrt(np.sum(e * e) / K))


def mg_ehat_rms(data: Trajectory, basis: TestFunctionBasis, s: float = DEFAULT_COARSENING) -> float:
    """RMS over test functions and dimensions of the coarse-mode error estimate."""
    grid = data.grid
    n = _mg_mode(grid.M, s)
    # basis rows carry the quadrature weights; they equal dt*phi_k since phi_k vanishes at 0 and T
    coef = basis.phi @ (data.values * _phase(grid, n)[:, None]) / math.sqrt(grid.T)
    return _rms(coef, grid.T, basis.K)


def mg_rms_curve(data: Trajectory, eta: float = 9.0, s: float = DEFAULT_COARSENING, steps=None) -> ErrorCurve:
    grid = data.grid
    n = _mg_mode(grid.M, s)
    steps = radius_grid(grid) if steps is None else np.asarray(steps, int)
    y = data.values * _phase(grid, n)[:, None]
    vals, counts = [], []
    for m in steps:
        psi = ReferenceFunction.bump(m * grid.dt, eta)
        centers = admissible_centers(grid, psi.radius)
        kernel, _ = sampled_kernel(psi, grid)
        coef = correlate_translates(kernel, y, grid, centers) / math.sqrt(grid.T)
        vals.append(_rms(coef, grid.T, len(centers)))
        counts.append(len(centers))
    return ErrorCurve(steps * grid.dt, np.array(vals), np.array(counts), CurveKind.RMS, grid.dt)


@dataclass
class MgSelection:
    r_min: float
    scales: tuple[int, ...]
    sigma: np.ndarray = field(repr=False)
    k: int
    basis: TestFunctionBasis = field(repr=False)
    curve: ErrorCurve = field(repr=False)
    walltime_ms: float = 0.0

    def to_dict(self, curve_csv_path=None) -> dict:
        return {
            "method": "MG",
            "r_min": self.r_min,
            "K": self.basis.K,
            "scales": list(self.scales),
            "walltime_ms": self.walltime_ms,
            "curve_csv_path": None if curve_csv_path is None else str(curve_csv_path),
        }


def svd_truncation(sigma: np.ndarray) -> int:
    """Corner of the log singular-value spectrum, as a count of retained values."""
    sigma = np.asarray(sigma, float)
    if sigma.size < 3:
        return int(np.count_nonzero(sigma > 0)) or 1
    idx = np.arange(1, sigma.size + 1, dtype=float)
    return int(detect_changepoint(idx, np.log(np.maximum(sigma, VALUE_FLOOR))).x)


def orthonormalize(phi_full: np.ndarray, phidot_full: np.ndarray, k: int | None = None):
    """Project stacked test functions onto the leading left singular vectors, rescaled."""
    Q, sigma, Vt = np.linalg.svd(phi_full, full_matrices=False)
    if k is None:
        k = svd_truncation(sigma)
    if sigma[k - 1] <= 0:
        raise SelectionError("truncation keeps a zero singular value")
    P = Q[:, :k].T / sigma[:k, None]
    # P @ phi_full equals Vt[:k] exactly; the SVD factor is the better-rounded copy
    return Vt[:k].copy(), P @ phidot_full, sigma, k


def mg_select(data: Trajectory, eta: float = 9.0, s: float = DEFAULT_COARSENING) -> MgSelection:
    grid = data.grid
    t0 = time.perf_counter()
    curve = mg_rms_curve(data, eta, s)
    r_min = float(detect_changepoint(curve.radii, curve.log_values()).x)
    m_max = grid.M // 2
    m_min = int(round(r_min / grid.dt))
    scales = tuple(c for c in MG_SCALES if c * m_min <= m_max)
    if not scales:
        raise SelectionError(f"minimum radius {r_min} admits no test functions")
    dropped = [c for c in MG_SCALES if c not in scales]
    if dropped:
        log.info("dropping scales %s above the largest admissible radius", dropped)
    bases = [build_basis(ReferenceFunction.bump(c * m_min * grid.dt, eta), grid) for c in scales]
    phi, phidot, sigma, k = orthonormalize(np.vstack([b.phi for b in bases]),
                                           np.vstack([b.phidot for b in bases]))
    basis = TestFunctionBasis(phi, phidot, np.arange(k), r_min, grid, orthonormalized=True)
    return MgSelection(r_min, scales, sigma, k, basis, curve, 1e3 * (time.perf_counter() - t0))


def write_selection_json(selection, path, curve_csv_path=None) -> None:
    Path(path).write_text(json.dumps(selection.to_dict(curve_csv_path), indent=2, sort_keys=True) + "\n")
