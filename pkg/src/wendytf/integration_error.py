"""Weak-form quadrature error: exact (validation) and data-driven estimates.

The estimator writes the trapezoidal error of every translated test function
as a Fourier sum over the reference-function coefficients times an
Euler-Maclaurin expansion that only needs the data and its derivatives at the
two ends of the time interval. One FFT per radius then yields the error at
all centers at once.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import signal

from .grid import TimeGrid, Trajectory
from .systems import OdeSystem, feature_matrix
from .testfunctions import (
    ReferenceFunction,
    admissible_centers,
    fft_frequencies,
    psi_hat_closed_form,
    radius_steps,
    sampled_kernel,
    trapezoid_weights,
)

VALUE_FLOOR = 1e-300
IMAG_TOL = 1e-10

_BERNOULLI_EVEN = {
    1: Fraction(1, 6),
    2: Fraction(-1, 30),
    3: Fraction(1, 42),
    4: Fraction(-1, 30),
    5: Fraction(5, 66),
    6: Fraction(-691, 2730),
    7: Fraction(7, 6),
    8: Fraction(-3617, 510),
}


class ConsistencyError(RuntimeError):
    """Raised when a quantity that must be real picks up a large imaginary part."""


def bernoulli_even_exact(s: int) -> Fraction:
    if s not in _BERNOULLI_EVEN:
        raise ValueError(f"B_2s tabulated for s = 1..8, got s={s}")
    return _BERNOULLI_EVEN[s]


def bernoulli_even(s: int) -> float:
    return float(bernoulli_even_exact(s))


class End(str, enum.Enum):
    LEFT = "left"
    RIGHT = "right"


@dataclass(frozen=True)
class EulerMaclaurinConfig:
    S: int = 1
    mu: tuple[int, ...] | None = None

    def __post_init__(self):
        if not 1 <= self.S <= 4:
            raise ValueError("truncation order S must be in 1..4")
        mu = self.mu
        if mu is None:
            mu = tuple(2 * self.S - l + 1 for l in range(1, 2 * self.S + 1))
        mu = tuple(int(m) for m in mu)
        if len(mu) != 2 * self.S or min(mu) < 1:
            raise ValueError(f"need 2S={2 * self.S} stencil orders >= 1, got {mu}")
        object.__setattr__(self, "mu", mu)


@lru_cache(maxsize=None)
def one_sided_weights(l: int, n_points: int) -> tuple[float, ...]:
    """Forward-difference weights for the l-th derivative on offsets 0..n-1 (unit spacing).

    Solves the Taylor moment system sum_j w_j j^k / k! = [k == l] exactly in
    rational arithmetic.
    """
    if n_points <= l:
        raise ValueError("need more points than the derivative order")
    n = n_points
    A = [[Fraction(j ** k, math.factorial(k)) for j in range(n)] + [Fraction(int(k == l))]
         for k in range(n)]
    for col in range(n):
        piv = next(r for r in range(col, n) if A[r][col] != 0)
        A[col], A[piv] = A[piv], A[col]
        inv = 1 / A[col][col]
        A[col] = [a * inv for a in A[col]]
        for r in range(n):
            if r != col and A[r][col] != 0:
                f = A[r][col]
                A[r] = [a - f * b for a, b in zip(A[r], A[col])]
    return tuple(float(A[j][n]) for j in range(n))


def endpoint_derivative(data, grid: TimeGrid, l: int, mu: int, end: End | str) -> float:
    """One-sided finite-difference estimate of the l-th derivative at an end of [0, T]."""
    data = np.asarray(data, dtype=float)
    end = End(end)
    if l < 1 or mu < 1:
        raise ValueError("derivative and stencil orders must be >= 1")
    n = mu + l
    if n > len(data):
        raise ValueError(f"stencil needs {n} points, only {len(data)} available")
    w = np.array(one_sided_weights(l, n))
    seg = data[:n] if end is End.LEFT else data[::-1][:n]
    # weights sum to zero; differencing against the boundary value keeps constants exact
    val = float(w[1:] @ (seg[1:] - seg[0])) / grid.dt ** l
    # mirrored stencil: odd derivatives flip sign
    return val if end is End.LEFT else (-1) ** l * val


def _endpoint_jumps(u: np.ndarray, grid: TimeGrid, cfg: EulerMaclaurinConfig) -> np.ndarray:
    """D^l[u](T) - D^l[u](0) for l = 0..2S."""
    jumps = [u[-1] - u[0]]
    for l in range(1, 2 * cfg.S + 1):
        mu = cfg.mu[l - 1]
        jumps.append(endpoint_derivative(u, grid, l, mu, End.RIGHT)
                     - endpoint_derivative(u, grid, l, mu, End.LEFT))
    return np.array(jumps)


def build_I_vector(u, grid: TimeGrid, cfg: EulerMaclaurinConfig = EulerMaclaurinConfig()) -> np.ndarray:
    """Truncated Euler-Maclaurin approximation of I_n for all M frequencies (FFT order)."""
    u = np.asarray(u, dtype=float)
    if len(u) != grid.M + 1:
        raise ValueError("data length does not match grid")
    jumps = _endpoint_jumps(u, grid, cfg)
    d = 2j * np.pi * fft_frequencies(grid.M) / grid.T
    I = np.full(grid.M, jumps[0], dtype=complex)
    for s in range(1, cfg.S + 1):
        coef = grid.dt ** (2 * s) * bernoulli_even(s) / math.factorial(2 * s)
        inner = np.zeros(grid.M, dtype=complex)
        for l in range(2 * s + 1):
            inner += math.comb(2 * s, l) * d ** (2 * s - l) * jumps[l]
        I += coef * inner
    return I


def psi_hat_vector(p: int, r: float, grid: TimeGrid) -> np.ndarray:
    n = fft_frequencies(grid.M)
    # coefficients are even in n: evaluate each |n| once
    uniq = np.arange(grid.M // 2 + 1)
    vals = psi_hat_closed_form(p, r, grid.T, uniq)
    return vals[np.abs(n)]


def _spectrum(psi_hat: np.ndarray, I: np.ndarray, M: int) -> np.ndarray:
    x = psi_hat * I
    if M % 2 == 0:
        # the lone -M/2 mode: keep its real part so the sum stays real
        x[M // 2] = psi_hat[M // 2] * I[M // 2].real
    return x


def estimate_eint(u, grid: TimeGrid, p: int, r: float,
                  cfg: EulerMaclaurinConfig = EulerMaclaurinConfig(), *,
                  stride: int = 1, I=None, method: str = "fft") -> np.ndarray:
    """Estimated integration error at every admissible center for radius r."""
    m_r = radius_steps(grid, r)
    if not 2 <= m_r <= grid.M // 2:
        raise ValueError(f"radius must be 2..{grid.M // 2} grid steps, got {m_r}")
    centers = admissible_centers(grid, r, stride)
    if I is None:
        I = build_I_vector(u, grid, cfg)
    psi_hat = psi_hat_vector(p, m_r * grid.dt, grid)
    if method == "dense":
        n = fft_frequencies(grid.M)
        F = np.exp(-2j * np.pi * np.outer(centers, n) / grid.M)
        return (F @ (psi_hat * I)).real / math.sqrt(grid.T)
    if method != "fft":
        raise ValueError(f"unknown method {method!r}")
    x = _spectrum(psi_hat, I, grid.M)
    out = np.fft.fft(x)[centers]
    scale = np.abs(x).sum()
    # values below the log floor are irrelevant downstream, so they are not policed
    if np.abs(out.imag).max() > max(IMAG_TOL * scale, VALUE_FLOOR):
        raise ConsistencyError("estimated integration error has a non-negligible imaginary part")
    return out.real / math.sqrt(grid.T)


class CurveKind(str, enum.Enum):
    ESTIMATED = "estimated"
    TRUE = "true"
    RMS = "rms"


@dataclass(frozen=True)
class ErrorCurve:
    radii: np.ndarray
    values: np.ndarray
    counts: np.ndarray
    kind: CurveKind
    dt: float = field(default=1.0)

    def __post_init__(self):
        if not (len(self.radii) == len(self.values) == len(self.counts)):
            raise ValueError("curve arrays must have equal length")
        object.__setattr__(self, "kind", CurveKind(self.kind))

    @property
    def steps(self) -> np.ndarray:
        return np.rint(self.radii / self.dt).astype(int)

    def log_values(self) -> np.ndarray:
        return np.log(np.maximum(self.values, VALUE_FLOOR))

    def at(self, r: float) -> float:
        i = int(np.argmin(np.abs(self.radii - r)))
        return float(self.values[i])

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["r", "K", "value", "kind"])
            for r, K, v in zip(self.radii, self.counts, self.values):
                writer.writerow([repr(float(r)), int(K), repr(float(v)), self.kind.value])


def radius_grid(grid: TimeGrid, step: int = 1) -> np.ndarray:
    """Candidate radii in grid steps: 2..floor(M/2)."""
    return np.arange(2, grid.M // 2 + 1, step)


def ehat_curve(data: Trajectory, p: int = 16, cfg: EulerMaclaurinConfig = EulerMaclaurinConfig(),
               stride: int = 1, steps=None) -> ErrorCurve:
    grid = data.grid
    if grid.M < 4:
        raise ValueError("need M >= 4")
    steps = radius_grid(grid) if steps is None else np.asarray(steps, int)
    Is = [build_I_vector(data.column(i), grid, cfg) for i in range(data.d)]
    values, counts = [], []
    for m in steps:
        r = m * grid.dt
        parts = [estimate_eint(None, grid, p, r, cfg, stride=stride, I=I) for I in Is]
        e = np.concatenate(parts)
        K = len(parts[0])
        values.append(np.linalg.norm(e) / math.sqrt(K))
        counts.append(K)
    return ErrorCurve(steps * grid.dt, np.array(values), np.array(counts), CurveKind.ESTIMATED, grid.dt)


def correlate_translates(kernel: np.ndarray, y: np.ndarray, grid: TimeGrid,
                         centers: np.ndarray) -> np.ndarray:
    """Rows of a quadrature-weighted translate basis applied to columns of y.

    Equivalent to ``assemble_basis(...).phi @ y`` for a sampled kernel, without
    forming the matrix.
    """
    m_r = (len(kernel) - 1) // 2
    yq = np.asarray(y) * (trapezoid_weights(grid) if np.ndim(y) == 1
                          else trapezoid_weights(grid)[:, None])
    if yq.ndim == 1:
        full = signal.correlate(yq, kernel, mode="valid", method="direct")
    else:
        full = np.stack([signal.correlate(yq[:, c], kernel, mode="valid", method="direct")
                         for c in range(yq.shape[1])], axis=1)
    return full[np.asarray(centers) - m_r]


def true_eint_vector(system: OdeSystem, clean: Trajectory, psi: ReferenceFunction,
                     stride: int = 1, w=None) -> np.ndarray:
    grid = clean.grid
    w = system.w_star if w is None else np.asarray(w, float)
    centers = admissible_centers(grid, psi.radius, stride)
    val, der = sampled_kernel(psi, grid)
    parts = []
    for i, blk in enumerate(system.blocks()):
        f = feature_matrix(system, i, clean) @ w[blk]
        parts.append(correlate_translates(val, f, grid, centers)
                     + correlate_translates(der, clean.column(i), grid, centers))
    return np.concatenate(parts)


def true_eint_curve(system: OdeSystem, clean: Trajectory, p: int = 16, stride: int = 1,
                    steps=None, family: str = "poly", eta: float = 9.0) -> ErrorCurve:
    """Exact weak-form quadrature error e(r); needs the true parameters and clean data."""
    grid = clean.grid
    steps = radius_grid(grid) if steps is None else np.asarray(steps, int)
    values, counts = [], []
    for m in steps:
        psi = ReferenceFunction(family, m * grid.dt, order=p, eta=eta)
        e = true_eint_vector(system, clean, psi, stride)
        K = len(e) // system.d
        values.append(np.linalg.norm(e) / math.sqrt(K))
        counts.append(K)
    return ErrorCurve(steps * grid.dt, np.array(values), np.array(counts), CurveKind.TRUE, grid.dt)


@dataclass(frozen=True)
class ResidualTerms:
    e_theta: np.ndarray
    r0: np.ndarray
    e_int: np.ndarray
    b_eps: np.ndarray

    def total(self) -> np.ndarray:
        return self.e_theta + self.r0 + self.e_int - self.b_eps


def residual_decomposition(system: OdeSystem, clean: Trajectory, noisy: Trajectory, w, basis) -> ResidualTerms:
    """Split G w - b into noise-in-G, parameter, quadrature and noise-in-b parts."""
    from .regression import assemble_weak_system

    w = np.asarray(w, dtype=float)
    ws = assemble_weak_system(system, noisy, basis)
    ws_star = assemble_weak_system(system, clean, basis)
    return ResidualTerms(
        e_theta=(ws.G - ws_star.G) @ w,
        r0=ws_star.G @ (w - system.w_star),
        e_int=ws_star.G @ system.w_star - ws_star.b,
        b_eps=ws.b - ws_star.b,
    )


def _dominant_frequency(u: np.ndarray, tau: float) -> int:
    spec = np.abs(np.fft.rfft(u[:-1]))[1:]
    if spec.size == 0 or spec.max() == 0:
        return 0
    keep = np.nonzero(spec >= tau * spec.max())[0]
    return int(keep.max()) + 1


def choose_truncation_order(u, grid: TimeGrid, tau: float = 0.1, max_order: int = 4) -> int:
    """Smallest S whose leading Euler-Maclaurin term is below ``tau`` relative to
    the lower-order approximation, at the highest frequency carrying data energy."""
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    u = np.asarray(u, dtype=float)
    jump = u[-1] - u[0]
    n = _dominant_frequency(u, tau)
    if jump == 0 or n == 0:
        return 1
    d = 2j * np.pi * n / grid.T
    for S in range(1, max_order + 1):
        num = abs(grid.dt ** (2 * S) * bernoulli_even(S) / math.factorial(2 * S) * d ** (2 * S) * jump)
        if S == 1:
            den = abs(jump)
        else:
            I_prev = build_I_vector(u, grid, EulerMaclaurinConfig(S - 1))
            den = abs(I_prev[n])
        if den > 0 and num / den < tau:
            return S
    return max_order
