"""Uniform time grids, trajectories, noise injection and error metrics."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class NoiseConvention(str, enum.Enum):
    RMS = "rms"
    FROBENIUS = "frobenius"


@dataclass(frozen=True)
class TimeGrid:
    T: float
    M: int

    @property
    def dt(self) -> float:
        return self.T / self.M

    @property
    def points(self) -> np.ndarray:
        # m * dt, never a cumulative sum
        return np.arange(self.M + 1) * self.dt

    def __len__(self) -> int:
        return self.M + 1


def make_grid(T: float, M: int) -> TimeGrid:
    if not T > 0:
        raise ValueError(f"time span must be positive, got T={T}")
    if int(M) != M or M < 4:
        raise ValueError(f"need an integer M >= 4, got M={M}")
    return TimeGrid(float(T), int(M))


@dataclass(frozen=True)
class Trajectory:
    grid: TimeGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.shape[0] != self.grid.M + 1:
            raise ValueError(
                f"trajectory has {vals.shape[0]} rows, grid needs {self.grid.M + 1}"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("trajectory contains non-finite values")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def column(self, i: int) -> np.ndarray:
        return self.values[:, i]

    def to_csv(self, path) -> None:
        path = Path(path)
        t = self.grid.points
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t"] + [f"u{i + 1}" for i in range(self.d)])
            for m in range(self.grid.M + 1):
                writer.writerow([repr(float(t[m]))] + [repr(float(v)) for v in self.values[m]])

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        t = data[:, 0]
        M = len(t) - 1
        grid = make_grid(float(t[-1]), M)
        if not np.allclose(t, grid.points, rtol=0, atol=1e-12 * max(1.0, grid.T)):
            raise ValueError(f"{path}: time column is not a uniform grid starting at 0")
        return cls(grid, data[:, 1:])


@dataclass(frozen=True)
class NoiseSpec:
    ratio: float
    seed: int = 0
    convention: NoiseConvention = NoiseConvention.RMS

    def __post_init__(self):
        if self.ratio < 0:
            raise ValueError("noise ratio must be nonnegative")
        object.__setattr__(self, "convention", NoiseConvention(self.convention))


def noise_sigma(clean: Trajectory, spec: NoiseSpec) -> float:
    fro = float(np.linalg.norm(clean.values))
    if spec.convention is NoiseConvention.FROBENIUS:
        return spec.ratio * fro
    return spec.ratio * fro / np.sqrt(clean.values.size)


def add_noise(clean: Trajectory, spec: NoiseSpec) -> Trajectory:
    """Add i.i.d. Gaussian noise with one sigma shared by all dimensions.

    The seed alone fixes the draw (PCG64 + numpy's ziggurat normal sampler).
    """
    if spec.ratio == 0:
        return Trajectory(clean.grid, clean.values.copy())
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    sigma = noise_sigma(clean, spec)
    eps = rng.standard_normal(clean.values.shape) * sigma
    return Trajectory(clean.grid, clean.values + eps)


def e2_metric(w_hat, w_star) -> float:
    w_hat = np.asarray(w_hat, dtype=float)
    w_star = np.asarray(w_star, dtype=float)
    if w_hat.shape != w_star.shape:
        raise ValueError(f"length mismatch: {w_hat.shape} vs {w_star.shape}")
    denom = np.linalg.norm(w_star)
    if denom == 0:
        raise ValueError("reference parameter vector has zero norm")
    return float(np.linalg.norm(w_hat - w_star) / denom)
