"""Benchmark ODE systems whose right-hand sides are linear in the parameters."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml
from scipy.integrate import solve_ivp

from .grid import TimeGrid, Trajectory


class SimulationError(RuntimeError):
    pass


class FeatureEvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class Feature:
    """Monomial prod_j u_j**exponents[j]; all-zero exponents give the constant 1."""

    exponents: tuple[int, ...]

    @property
    def arity(self) -> int:
        return len(self.exponents)

    @property
    def label(self) -> str:
        parts = []
        for j, e in enumerate(self.exponents):
            if e == 1:
                parts.append(f"u{j + 1}")
            elif e > 1:
                parts.append(f"u{j + 1}^{e}")
        return "*".join(parts) if parts else "1"

    def __call__(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        out = np.ones(u.shape[:-1])
        for j, e in enumerate(self.exponents):
            if e:
                out = out * u[..., j] ** e
        return out

    def gradient(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        grad = np.zeros(u.shape)
        for j, e in enumerate(self.exponents):
            if e == 0:
                continue
            g = e * u[..., j] ** (e - 1)
            for jj, ee in enumerate(self.exponents):
                if jj != j and ee:
                    g = g * u[..., jj] ** ee
            grad[..., j] = g
        return grad


@dataclass(frozen=True)
class OdeSystem:
    name: str
    features: tuple[tuple[Feature, ...], ...]
    w_star: np.ndarray
    u0: np.ndarray
    T: float

    def __post_init__(self):
        w = np.asarray(self.w_star, dtype=float)
        u0 = np.atleast_1d(np.asarray(self.u0, dtype=float))
        if any(len(fs) == 0 for fs in self.features):
            raise ValueError(f"{self.name}: every dimension needs at least one feature")
        if len(w) != sum(len(fs) for fs in self.features):
            raise ValueError(f"{self.name}: w_star length does not match the feature count")
        if len(u0) != len(self.features):
            raise ValueError(f"{self.name}: u0 has wrong dimension")
        for fs in self.features:
            for f in fs:
                if f.arity != len(self.features):
                    raise ValueError(f"{self.name}: feature {f.exponents} has wrong arity")
        object.__setattr__(self, "w_star", w)
        object.__setattr__(self, "u0", u0)

    @property
    def d(self) -> int:
        return len(self.features)

    @property
    def n_params(self) -> int:
        return len(self.w_star)

    def blocks(self) -> list[slice]:
        """Slices of the stacked parameter vector owned by each dimension."""
        out, start = [], 0
        for fs in self.features:
            out.append(slice(start, start + len(fs)))
            start += len(fs)
        return out

    def rhs(self, w: np.ndarray):
        w = np.asarray(w, dtype=float)
        blocks = self.blocks()

        def f(t, u):
            return np.array([
                sum(wq * feat(u) for wq, feat in zip(w[blk], fs))
                for blk, fs in zip(blocks, self.features)
            ])

        return f

    def with_params(self, w) -> "OdeSystem":
        return OdeSystem(self.name, self.features, np.asarray(w, float), self.u0, self.T)


def _mono(*exps: int) -> Feature:
    return Feature(tuple(exps))


def _builtin_table() -> dict[str, OdeSystem]:
    return {
        "logistic": OdeSystem(
            "logistic",
            ((_mono(1), _mono(2)),),
            np.array([1.0, -1.0]),
            np.array([0.01]),
            10.0,
        ),
        "duffing": OdeSystem(
            "duffing",
            ((_mono(0, 1),), (_mono(0, 1), _mono(1, 0), _mono(3, 0))),
            np.array([1.0, -0.2, -0.05, -1.0]),
            np.array([0.0, 2.0]),
            20.0,
        ),
        "fitzhugh_nagumo": OdeSystem(
            "fitzhugh_nagumo",
            ((_mono(1, 0), _mono(3, 0), _mono(0, 1)), (_mono(1, 0), _mono(0, 0), _mono(0, 1))),
            np.array([3.0, -3.0, 3.0, -1.0 / 3.0, 17.0 / 150.0, 1.0 / 15.0]),
            np.array([0.0, 0.1]),
            25.0,
        ),
        "lorenz": OdeSystem(
            "lorenz",
            (
                (_mono(0, 1, 0), _mono(1, 0, 0)),
                (_mono(1, 0, 0), _mono(1, 0, 1), _mono(0, 1, 0)),
                (_mono(1, 1, 0), _mono(0, 0, 0)),
            ),
            np.array([10.0, -10.0, 28.0, -1.0, -1.0, 1.0, -8.0 / 3.0]),
            np.array([-8.0, 10.0, 27.0]),
            10.0,
        ),
        # the classical attractor, with the third equation's last term linear in u3
        "lorenz63": OdeSystem(
            "lorenz63",
            (
                (_mono(0, 1, 0), _mono(1, 0, 0)),
                (_mono(1, 0, 0), _mono(1, 0, 1), _mono(0, 1, 0)),
                (_mono(1, 1, 0), _mono(0, 0, 1)),
            ),
            np.array([10.0, -10.0, 28.0, -1.0, -1.0, 1.0, -8.0 / 3.0]),
            np.array([-8.0, 10.0, 27.0]),
            10.0,
        ),
    }


_ALIASES = {
    "logisticgrowth": "logistic",
    "logistic_growth": "logistic",
    "fitzhughnagumo": "fitzhugh_nagumo",
    "fhn": "fitzhugh_nagumo",
}

SYSTEM_NAMES = ("logistic", "duffing", "fitzhugh_nagumo", "lorenz", "lorenz63")
BENCHMARK_SYSTEMS = SYSTEM_NAMES[:4]


def builtin_system(name: str) -> OdeSystem:
    key = name.lower().replace("-", "_")
    key = _ALIASES.get(key.replace("_", ""), _ALIASES.get(key, key))
    table = _builtin_table()
    if key not in table:
        raise KeyError(f"unknown system {name!r}; valid options: {', '.join(SYSTEM_NAMES)}")
    return table[key]


def load_system(path) -> OdeSystem:
    """Read a system definition from YAML.

    Expected keys: ``name``, ``features`` (one list of exponent tuples per
    dimension), ``w_star``, ``u0`` and ``T``.
    """
    with Path(path).open() as fh:
        raw = yaml.safe_load(fh)
    try:
        feats = tuple(tuple(Feature(tuple(int(e) for e in exps)) for exps in dim) for dim in raw["features"])
        return OdeSystem(str(raw["name"]), feats, np.array(raw["w_star"], float),
                         np.array(raw["u0"], float), float(raw["T"]))
    except KeyError as exc:
        raise ValueError(f"{path}: missing key {exc}") from None


def simulate(system: OdeSystem, u0=None, grid: TimeGrid | None = None,
             rtol: float = 3e-14, atol: float = 1e-15, w=None) -> Trajectory:
    """Integrate with an adaptive Dormand-Prince pair (DOP853), sampled on the grid."""
    for tol in (rtol, atol):
        if not 0 < tol <= 1e-3:
            raise ValueError("tolerances must lie in (0, 1e-3]")
    u0 = system.u0 if u0 is None else np.atleast_1d(np.asarray(u0, float))
    if grid is None:
        raise ValueError("a time grid is required")
    w = system.w_star if w is None else np.asarray(w, float)
    t = grid.points
    sol = solve_ivp(system.rhs(w), (0.0, grid.T), u0, method="DOP853", t_eval=t,
                    rtol=rtol, atol=atol)
    if sol.status != 0 or sol.y.shape[1] != len(t):
        t_fail = sol.t[-1] if len(sol.t) else 0.0
        raise SimulationError(f"{system.name}: integration failed at t={t_fail:.6g}: {sol.message}")
    return Trajectory(grid, sol.y.T)


def _check_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(arr))[0]
        raise FeatureEvaluationError(f"non-finite {what} at index {tuple(bad)}")
    return arr


def feature_matrix(system: OdeSystem, dim: int, data) -> np.ndarray:
    """Theta for one output dimension; ``dim`` is zero-based."""
    U = data.values if isinstance(data, Trajectory) else np.atleast_2d(np.asarray(data, float))
    if not 0 <= dim < system.d:
        raise IndexError(f"dimension {dim} out of range for {system.name}")
    with np.errstate(over="ignore", invalid="ignore"):
        cols = [f(U) for f in system.features[dim]]
    return _check_finite(np.stack(cols, axis=1), "feature value")


def feature_jacobian(system: OdeSystem, dim: int, data) -> np.ndarray:
    """Array of shape (M+1, J_dim, d) of feature partial derivatives."""
    U = data.values if isinstance(data, Trajectory) else np.atleast_2d(np.asarray(data, float))
    if not 0 <= dim < system.d:
        raise IndexError(f"dimension {dim} out of range for {system.name}")
    with np.errstate(over="ignore", invalid="ignore"):
        grads = [f.gradient(U) for f in system.features[dim]]
    return _check_finite(np.stack(grads, axis=1), "feature gradient")


def stacked_features(system: OdeSystem, data) -> list[np.ndarray]:
    return [feature_matrix(system, i, data) for i in range(system.d)]


def parameter_labels(system: OdeSystem) -> list[str]:
    return [f"du{i + 1}/dt:{f.label}" for i, fs in enumerate(system.features) for f in fs]

