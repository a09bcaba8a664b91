"""Compactly supported reference functions and quadrature-weighted test-function matrices.

Two families are supported, both L2-normalized on their support [-r, r]:

* piecewise polynomial  ``C (r^2 - t^2)^p``
* C-infinity bump       ``C exp(-eta / (1 - (t/r)^2))``
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
from scipy import integrate

from .grid import TimeGrid


class Family(str, enum.Enum):
    POLY = "poly"
    BUMP = "bump"


# ---------------------------------------------------------------------------
# normalization constants


@lru_cache(maxsize=None)
def _alt_binomial_sum(q: int) -> float:
    """sum_k C(q,k) (-1)^k / (2k+1), i.e. int_0^1 (1-x^2)^q dx, evaluated exactly."""
    total = sum(Fraction((-1) ** k * math.comb(q, k), 2 * k + 1) for k in range(q + 1))
    return float(total)


def poly_l2_constant(r: float, p: int) -> float:
    """Normalization making ``C (r^2 - t^2)^p`` unit-norm in L2."""
    if p < 1 or int(p) != p:
        raise ValueError("polynomial order must be an integer >= 1")
    if not r > 0:
        raise ValueError("radius must be positive")
    # log space keeps r^(2p) from overflowing for large p
    log_norm = 2 * p * math.log(r) + 0.5 * math.log(2 * r) + 0.5 * math.log(_alt_binomial_sum(2 * p))
    return math.exp(-log_norm)


@lru_cache(maxsize=None)
def _bump_unit_integral(eta: float) -> float:
    val, _ = integrate.quad(lambda x: math.exp(-2 * eta / (1 - x * x)), -1, 1,
                            epsabs=0, epsrel=1e-13, limit=200)
    return val


def bump_l2_constant(r: float, eta: float) -> float:
    if not (r > 0 and eta > 0):
        raise ValueError("radius and shape must be positive")
    return 1.0 / math.sqrt(r * _bump_unit_integral(float(eta)))


@dataclass(frozen=True)
class ReferenceFunction:
    family: Family
    radius: float
    order: int = 16
    eta: float = 9.0

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if self.family is Family.POLY and (self.order < 2 or int(self.order) != self.order):
            raise ValueError("polynomial order must be an integer >= 2")
        if self.family is Family.BUMP and not self.eta > 0:
            raise ValueError("bump shape parameter must be positive")

    @classmethod
    def poly(cls, radius: float, order: int = 16) -> "ReferenceFunction":
        return cls(Family.POLY, radius, order=order)

    @classmethod
    def bump(cls, radius: float, eta: float = 9.0) -> "ReferenceFunction":
        return cls(Family.BUMP, radius, eta=eta)

    @property
    def C(self) -> float:
        if self.family is Family.POLY:
            return poly_l2_constant(self.radius, self.order)
        return bump_l2_constant(self.radius, self.eta)

    def with_radius(self, radius: float) -> "ReferenceFunction":
        return ReferenceFunction(self.family, radius, self.order, self.eta)


def eval_reference(psi: ReferenceFunction, t):
    """Return (value, derivative) of the reference function at ``t``."""
    t = np.asarray(t, dtype=float)
    r = psi.radius
    inside = np.abs(t) < r
    ti = np.where(inside, t, 0.0)
    C = psi.C
    if psi.family is Family.POLY:
        p = psi.order
        base = r * r - ti * ti
        val = C * base ** p
        der = -2.0 * p * C * ti * base ** (p - 1)
    else:
        s = 1.0 - (ti / r) ** 2
        val = C * np.exp(-psi.eta / s)
        der = val * (-2.0 * psi.eta * ti / (r * r)) / (s * s)
    val = np.where(inside, val, 0.0)
    der = np.where(inside, der, 0.0)
    if val.ndim == 0:
        return float(val), float(der)
    return val, der


# ---------------------------------------------------------------------------
# spherical / half-integer Bessel functions


def _double_factorial_odd(p: int) -> float:
    return float(math.prod(range(1, 2 * p + 2, 2)))


def _j0_j1(x):
    with np.errstate(divide="ignore", invalid="ignore"):
        s, c = np.sin(x), np.cos(x)
        j0 = np.where(x > 0, s / x, 1.0)
        j1 = np.where(x > 0, s / x ** 2 - c / x, 0.0)
    return j0, j1


def _j1_over_x(x):
    # closed form cancels badly near 0
    x2 = x * x
    series = 1 / 3 - x2 / 30 + x2 * x2 / 840 - x2 ** 3 / 45360
    with np.errstate(divide="ignore", invalid="ignore"):
        closed = (np.sin(x) / x - np.cos(x)) / x2
    return np.where(x < 0.1, series, closed)


def sph_jn_scaled(p: int, x) -> np.ndarray:
    """j_p(x) / x^p for x >= 0 (finite at x = 0 where it equals 1/(2p+1)!!).

    Uses upward recurrence from j_0, j_1 where x >= p and Miller's downward
    recurrence (on the scaled quantity, so no division by small x) where x < p.
    """
    if p < 0 or int(p) != p:
        raise ValueError("order must be a nonnegative integer")
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    if np.any(x < 0):
        raise ValueError("argument must be nonnegative")
    out = np.empty_like(x)

    up = x >= max(p, 1e-300)
    if p == 0:
        up = x > 0
    if np.any(up):
        xu = x[up]
        j0, j1 = _j0_j1(xu)
        if p == 0:
            jp = j0
        else:
            jm, jn = j0, j1
            for n in range(1, p):
                jm, jn = jn, (2 * n + 1) / xu * jn - jm
            jp = jn
        out[up] = jp / xu ** p

    down = ~up
    if np.any(down):
        xd = x[down]
        x2 = xd * xd
        top = p + 40 + int(2 * math.sqrt(p + 1))
        s = np.zeros((top + 2, xd.size))
        s[top] = 1e-30  # arbitrary seed, s[top + 1] = 0
        for n in range(top, 0, -1):
            s[n - 1] = (2 * n + 1) * s[n] - x2 * s[n + 1]
            if np.abs(s[n - 1]).max() > 1e250:
                s[n - 1:] *= 1e-250
        j0, _ = _j0_j1(xd)
        j1x = _j1_over_x(xd)
        use0 = np.abs(j0) >= np.abs(j1x * xd)
        norm = np.where(use0, j0 / np.where(use0, s[0], 1.0), j1x / np.where(use0, 1.0, s[1]))
        out[down] = s[p] * norm
    return float(out[0]) if scalar else out


def sph_jn(p: int, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return sph_jn_scaled(p, x) * x ** p


def bessel_half_integer(p: int, x):
    """J_{p+1/2}(x) = sqrt(2x/pi) j_p(x)."""
    x = np.asarray(x, dtype=float)
    res = np.sqrt(2.0 * x / np.pi) * sph_jn(p, x)
    return float(res) if res.ndim == 0 else res


# ---------------------------------------------------------------------------
# Fourier coefficients of the polynomial reference function


def psi_hat_closed_form(p: int, r: float, T: float, n):
    """Fourier coefficients (1/sqrt T) int psi(t) exp(-2 pi i n t / T) dt of the
    L2-normalized polynomial reference function; real and even in ``n``.
    """
    if int(p) != p or not 1 <= p <= 40:
        raise ValueError("closed form implemented for integer orders 1..40")
    n = np.asarray(n)
    scalar = n.ndim == 0
    n_abs = np.abs(np.atleast_1d(n)).astype(float)
    C = poly_l2_constant(r, p)
    out = np.empty_like(n_abs)
    zero = n_abs == 0
    if np.any(zero):
        log_mag = math.log(C) + (2 * p + 1) * math.log(r)
        out[zero] = 2.0 * math.exp(log_mag) * _alt_binomial_sum(p) / math.sqrt(T)
    if np.any(~zero):
        x = 2.0 * np.pi * n_abs[~zero] * r / T
        # C sqrt(pi) (rT/(n pi))^(p+1/2) p! J_{p+1/2}(x) rewritten with
        # (rT/(n pi)) = 2 r^2 / x and J_{p+1/2}(x) = sqrt(2x/pi) x^p [j_p(x)/x^p]
        log_pref = (math.log(C) + (p + 0.5) * math.log(2 * r * r) + math.lgamma(p + 1)
                    + 0.5 * math.log(2.0))
        out[~zero] = math.exp(log_pref) * sph_jn_scaled(p, x) / math.sqrt(T)
    return float(out[0]) if scalar else out


def fft_frequencies(M: int) -> np.ndarray:
    """Integer frequencies in FFT (wrap-around) order, length M."""
    return np.fft.fftfreq(M, d=1.0 / M).round().astype(int)


# ---------------------------------------------------------------------------
# test-function sets


def radius_steps(grid: TimeGrid, r: float) -> int:
    m_r = int(round(r / grid.dt))
    if m_r < 1 or not math.isclose(m_r * grid.dt, r, rel_tol=1e-9, abs_tol=1e-12):
        raise ValueError(f"radius {r} is not a positive multiple of dt={grid.dt}")
    return m_r


def admissible_centers(grid: TimeGrid, r: float, stride: int = 1) -> np.ndarray:
    m_r = radius_steps(grid, r)
    if stride < 1:
        raise ValueError("stride must be a positive integer")
    if 2 * m_r > grid.M:
        raise ValueError(f"radius {r} exceeds T/2; no admissible centers")
    return np.arange(m_r, grid.M - m_r + 1, stride)


def trapezoid_weights(grid: TimeGrid) -> np.ndarray:
    q = np.full(grid.M + 1, grid.dt)
    q[0] = q[-1] = grid.dt / 2
    return q


@dataclass(frozen=True)
class TestFunctionBasis:
    phi: np.ndarray = field(repr=False)
    phidot: np.ndarray = field(repr=False)
    centers: np.ndarray
    radius: float
    grid: TimeGrid
    orthonormalized: bool = False

    @property
    def K(self) -> int:
        return self.phi.shape[0]

    def to_csv(self, path, which: str = "phi") -> None:
        mat = self.phi if which == "phi" else self.phidot
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["row"] + [f"t{m}" for m in range(mat.shape[1])])
            for k, row in enumerate(mat):
                writer.writerow([k] + [repr(float(v)) for v in row])


def sampled_kernel(psi: ReferenceFunction, grid: TimeGrid):
    """Reference function and derivative sampled at j*dt for j = -m_r..m_r."""
    m_r = radius_steps(grid, psi.radius)
    offsets = np.arange(-m_r, m_r + 1) * grid.dt
    return eval_reference(psi, offsets)


def assemble_basis(psi: ReferenceFunction, centers, grid: TimeGrid) -> TestFunctionBasis:
    m_r = radius_steps(grid, psi.radius)
    centers = np.asarray(centers, dtype=int)
    if centers.size == 0:
        raise ValueError("no centers given")
    if centers.min() < m_r or centers.max() > grid.M - m_r:
        raise ValueError("centers are not admissible for this radius")
    val, der = sampled_kernel(psi, grid)
    K = len(centers)
    phi = np.zeros((K, grid.M + 1))
    phidot = np.zeros((K, grid.M + 1))
    cols = centers[:, None] + np.arange(-m_r, m_r + 1)[None, :]
    rows = np.repeat(np.arange(K)[:, None], 2 * m_r + 1, axis=1)
    phi[rows, cols] = val
    phidot[rows, cols] = der
    q = trapezoid_weights(grid)
    phi *= q
    phidot *= q
    return TestFunctionBasis(phi, phidot, centers, float(m_r * grid.dt), grid)


def build_basis(psi: ReferenceFunction, grid: TimeGrid, stride: int = 1) -> TestFunctionBasis:
    return assemble_basis(psi, admissible_centers(grid, psi.radius, stride), grid)
