"""Monte-Carlo experiment protocol shared by the command line and the acceptance tests.

Trial ``i`` always draws its noise from seed ``base_seed + i``; the same seed is
reused across noise levels so that the levels differ only in scale.
"""

from __future__ import annotations

import csv
import json
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml

from .grid import NoiseConvention, NoiseSpec, Trajectory, add_noise, e2_metric, make_grid
from .integration_error import EulerMaclaurinConfig, ehat_curve, true_eint_curve
from .changepoint import detect_changepoint
from .regression import IrlsConfig, assemble_weak_system, wendy_irls, wendy_ols
from .selection import DEFAULT_COARSENING, mg_select, sl_select
from .systems import OdeSystem, builtin_system, load_system, simulate
from .testfunctions import ReferenceFunction, build_basis

REGRESSIONS = ("ols", "irls")
SELECTIONS = ("sl", "mg")
LONG_HEADER = ["system", "method", "noise", "r", "trial", "E2", "walltime_ms"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    system: str = "logistic"
    system_file: str | None = None
    M: int = 1000
    T: float | None = None
    noise: tuple[float, ...] = (0.2,)
    trials: int = 25
    seed: int = 0
    regressions: tuple[str, ...] = REGRESSIONS
    selections: tuple[str, ...] = SELECTIONS
    p: int = 16
    eta: float = 9.0
    s: float = DEFAULT_COARSENING
    S: int = 1
    mu: tuple[int, ...] | None = None
    stride: int = 1
    sweep: tuple[int, int, int] | None = None
    radii: tuple[int, ...] | None = None
    surface_orders: tuple[int, ...] = (8, 12, 16, 20, 24)
    convention: str = "rms"
    threads: int = 1
    out_dir: str = "out"
    omit_timing: bool = False

    def __post_init__(self):
        if self.M < 8:
            raise ConfigError("M must be at least 8")
        if self.trials < 1:
            raise ConfigError("trials must be positive")
        if self.threads < 1:
            raise ConfigError("threads must be positive")
        if any(n < 0 for n in self.noise):
            raise ConfigError("noise ratios must be nonnegative")
        if not set(self.regressions) <= set(REGRESSIONS) or not self.regressions:
            raise ConfigError(f"regressions must be a subset of {REGRESSIONS}")
        if not set(self.selections) <= set(SELECTIONS) or not self.selections:
            raise ConfigError(f"selections must be a subset of {SELECTIONS}")
        if not 2 <= self.s <= 4:
            raise ConfigError("coarsening factor s must lie in [2, 4]")
        try:
            NoiseConvention(self.convention)
            self.em_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def em_config(self) -> EulerMaclaurinConfig:
        return EulerMaclaurinConfig(self.S, None if self.mu is None else tuple(self.mu))

    def load_system(self) -> OdeSystem:
        try:
            sys_ = load_system(self.system_file) if self.system_file else builtin_system(self.system)
        except KeyError as exc:
            raise ConfigError(exc.args[0]) from exc
        except (OSError, ValueError, TypeError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot load system: {exc}") from exc
        return sys_ if self.T is None else replace(sys_, T=float(self.T))

    def sweep_steps(self) -> np.ndarray:
        if self.radii is not None:
            steps = np.unique(np.asarray(self.radii, dtype=int))
            if steps.size == 0 or steps[0] < 2 or steps[-1] > self.M // 2:
                raise ConfigError(f"explicit radii must lie in 2..{self.M // 2} grid steps")
            return steps
        lo, hi, step = self.sweep or (2, self.M // 2, 1)
        hi = min(hi, self.M // 2)
        if lo < 2 or step < 1 or lo > hi:
            raise ConfigError("sweep must satisfy 2 <= start <= stop and step >= 1")
        return np.arange(lo, hi + 1, step)


_SECTIONS = {
    "grid": ("M", "T"),
    "test_functions": ("p", "eta", "s", "stride"),
    "quadrature": ("S", "mu"),
}


def config_from_mapping(raw: dict) -> ExperimentConfig:
    """Flatten the nested YAML layout into an :class:`ExperimentConfig`."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    flat = {}
    for key, val in raw.items():
        if key in _SECTIONS:
            if not isinstance(val, dict):
                raise ConfigError(f"section {key!r} must be a mapping")
            unknown = set(val) - set(_SECTIONS[key])
            if unknown:
                raise ConfigError(f"unknown keys in {key!r}: {sorted(unknown)}")
            flat.update(val)
        elif key == "sweep":
            if not isinstance(val, dict):
                raise ConfigError("section 'sweep' must be a mapping")
            unknown = set(val) - {"start", "stop", "step", "radii"}
            if unknown:
                raise ConfigError(f"unknown keys in 'sweep': {sorted(unknown)}")
            if "radii" in val:
                flat["radii"] = val["radii"]
            else:
                flat["sweep"] = (int(val.get("start", 2)), int(val.get("stop", 10**9)),
                                 int(val.get("step", 1)))
        else:
            flat[key] = val
    names = {f for f in ExperimentConfig.__dataclass_fields__}
    unknown = set(flat) - names
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in ("noise", "regressions", "selections", "surface_orders", "mu", "radii"):
        if key in flat and flat[key] is not None:
            v = flat[key]
            flat[key] = tuple(v) if isinstance(v, (list, tuple)) else (v,)
    try:
        return ExperimentConfig(**flat)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_mapping(raw or {})


_CLEAN_CACHE: dict[tuple, Trajectory] = {}


def clean_trajectory(cfg: ExperimentConfig, system: OdeSystem | None = None) -> Trajectory:
    """Noise-free samples, simulated once per process for each (system, M, T)."""
    system = system or cfg.load_system()
    key = (cfg.system_file or cfg.system, system.name, cfg.M, system.T)
    if key not in _CLEAN_CACHE:
        _CLEAN_CACHE[key] = simulate(system, grid=make_grid(system.T, cfg.M))
    return _CLEAN_CACHE[key]


def noisy_trial(clean: Trajectory, cfg: ExperimentConfig, noise: float, trial: int) -> Trajectory:
    return add_noise(clean, NoiseSpec(noise, cfg.seed + trial, NoiseConvention(cfg.convention)))


def _ms(t0: float) -> float:
    return 1e3 * (time.perf_counter() - t0)


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


# ---------------------------------------------------------------- radius sweep

@dataclass
class SweepTrial:
    noise: float
    trial: int
    r_hat_c: float
    rows: list = field(default_factory=list)
    failures: list = field(default_factory=list)


def run_sweep_trial(cfg: ExperimentConfig, noise: float, trial: int) -> SweepTrial:
    system = cfg.load_system()
    data = noisy_trial(clean_trajectory(cfg, system), cfg, noise, trial)
    r_hat = sl_select(data, cfg.p, cfg.em_config(), cfg.stride).r_hat_c
    out = SweepTrial(noise, trial, r_hat)
    for m in cfg.sweep_steps():
        r = float(m * data.grid.dt)
        t0 = time.perf_counter()
        try:
            basis = build_basis(ReferenceFunction.poly(r, cfg.p), data.grid, cfg.stride)
            ws = assemble_weak_system(system, data, basis)
            ols = wendy_ols(ws)
        except (ValueError, np.linalg.LinAlgError) as exc:
            out.failures.append((noise, r, trial, "ols", str(exc)))
            for reg in cfg.regressions:
                out.rows.append([system.name, reg, noise, r, trial, math.nan, math.nan])
            continue
        t_ols = _ms(t0)
        if "ols" in cfg.regressions:
            out.rows.append([system.name, "ols", noise, r, trial, e2_metric(ols.w_hat, system.w_star), t_ols])
        if "irls" in cfg.regressions:
            try:
                irls = wendy_irls(ws, system, data, basis, IrlsConfig(), w0=ols.w_hat)
                out.rows.append([system.name, "irls", noise, r, trial,
                                 e2_metric(irls.w_hat, system.w_star), _ms(t0)])
                if not irls.converged:
                    out.failures.append((noise, r, trial, "irls",
                                         f"not converged after {irls.iterations} iterations"))
            except (ValueError, np.linalg.LinAlgError) as exc:
                out.failures.append((noise, r, trial, "irls", str(exc)))
                out.rows.append([system.name, "irls", noise, r, trial, math.nan, math.nan])
    return out


def _pool_map(fn, cfg: ExperimentConfig, tasks: list[tuple]) -> list:
    if cfg.threads == 1 or len(tasks) == 1:
        return [fn(cfg, *t) for t in tasks]
    with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
        futures = [pool.submit(fn, cfg, *t) for t in tasks]
        return [f.result() for f in futures]


def sweep_radius(cfg: ExperimentConfig) -> list[SweepTrial]:
    tasks = [(n, i) for n in cfg.noise for i in range(cfg.trials)]
    results = _pool_map(run_sweep_trial, cfg, tasks)
    return sorted(results, key=lambda r: (r.noise, r.trial))


def median_table(rows, keys=("system", "method", "noise", "r")) -> list[tuple]:
    """Median E2 and walltime per group; NaNs (failed fits) are excluded."""
    groups: dict[tuple, list] = {}
    for row in rows:
        rec = dict(zip(LONG_HEADER, row))
        groups.setdefault(tuple(rec[k] for k in keys), []).append((rec["E2"], rec["walltime_ms"]))
    out = []
    for key, vals in groups.items():
        a = np.array(vals, dtype=float)
        ok = ~np.isnan(a[:, 0])
        med = float(np.median(a[ok, 0])) if ok.any() else math.nan
        wt = float(np.median(a[ok, 1])) if ok.any() else math.nan
        out.append((*key, med, wt, int(ok.sum())))
    return out


def write_sweep(results: list[SweepTrial], cfg: ExperimentConfig, out_dir: Path) -> dict[str, Path]:
    rows = [row for res in results for row in res.rows]
    paths = {
        "long": out_dir / "sweep_radius.csv",
        "summary": out_dir / "sweep_summary.csv",
        "critical": out_dir / "critical_radii.csv",
        "failures": out_dir / "failures.csv",
    }
    _write_long(paths["long"], rows, cfg.omit_timing)
    with paths["summary"].open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["system", "method", "noise", "r", "median_E2", "n_ok"])
        for system, method, noise, r, med, _, n_ok in median_table(rows):
            w.writerow([system, method, _fmt(noise), _fmt(r), _fmt(med), n_ok])
    with paths["critical"].open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["noise", "trial", "r_hat_c"])
        for res in results:
            w.writerow([_fmt(res.noise), res.trial, _fmt(res.r_hat_c)])
    with paths["failures"].open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["noise", "r", "trial", "stage", "message"])
        for res in results:
            for noise, r, trial, stage, msg in res.failures:
                w.writerow([_fmt(noise), _fmt(r), trial, stage, msg])
    return paths


def _write_long(path: Path, rows, omit_timing: bool) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LONG_HEADER)
        for row in rows:
            row = list(row)
            if omit_timing:
                row[6] = ""
            w.writerow([_fmt(v) for v in row])


def low_error_interval(radii, medians, factor: float = 1.5) -> tuple[float, float]:
    """Radius interval around the minimizer where the median error stays within ``factor``x of its minimum.

    Endpoints are interpolated (in log error) between the last sweep point
    inside the band and the first one outside it.
    """
    radii = np.asarray(radii, float)
    logm = np.log(np.asarray(medians, float))
    i = int(np.nanargmin(logm))
    cut = logm[i] + math.log(factor)

    def edge(direction):
        j = i
        while 0 <= j + direction < len(radii) and logm[j + direction] <= cut:
            j += direction
        k = j + direction
        if not 0 <= k < len(radii) or np.isnan(logm[k]):
            return radii[j]
        frac = (cut - logm[j]) / (logm[k] - logm[j])
        return radii[j] + frac * (radii[k] - radii[j])

    return float(edge(-1)), float(edge(1))


# ---------------------------------------------------------------- SL vs MG comparison

def run_compare_trial(cfg: ExperimentConfig, noise: float, trial: int) -> list[list]:
    """One noisy realization fitted by every configured selection x regression pair.

    Walltime covers selection plus estimation; the IRLS time includes its
    OLS initialization.
    """
    system = cfg.load_system()
    data = noisy_trial(clean_trajectory(cfg, system), cfg, noise, trial)
    rows = []
    for sel in cfg.selections:
        t0 = time.perf_counter()
        try:
            if sel == "sl":
                chosen = sl_select(data, cfg.p, cfg.em_config(), cfg.stride)
                basis, r = chosen.basis, chosen.r_hat_c
            else:
                chosen = mg_select(data, cfg.eta, cfg.s)
                basis, r = chosen.basis, chosen.r_min
            ws = assemble_weak_system(system, data, basis)
            ols = wendy_ols(ws)
            t_ols = _ms(t0)
            if "ols" in cfg.regressions:
                rows.append([system.name, f"ols-{sel}", noise, r, trial, e2_metric(ols.w_hat, system.w_star), t_ols])
            if "irls" in cfg.regressions:
                irls = wendy_irls(ws, system, data, basis, IrlsConfig(), w0=ols.w_hat)
                rows.append([system.name, f"irls-{sel}", noise, r, trial,
                             e2_metric(irls.w_hat, system.w_star), _ms(t0)])
        except (ValueError, np.linalg.LinAlgError):
            for reg in cfg.regressions:
                rows.append([system.name, f"{reg}-{sel}", noise, math.nan, trial, math.nan, math.nan])
    return rows


def compare(cfg: ExperimentConfig) -> list[list]:
    tasks = [(n, i) for n in cfg.noise for i in range(cfg.trials)]
    chunks = _pool_map(run_compare_trial, cfg, tasks)
    return [row for chunk in chunks for row in chunk]


def write_compare(rows, cfg: ExperimentConfig, out_dir: Path) -> dict[str, Path]:
    paths = {"long": out_dir / "compare.csv", "medians": out_dir / "compare_medians.csv"}
    _write_long(paths["long"], rows, cfg.omit_timing)
    with paths["medians"].open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["system", "method", "noise", "median_E2", "median_walltime_ms", "n_ok"])
        for system, method, noise, med, wt, n_ok in median_table(rows, ("system", "method", "noise")):
            w.writerow([system, method, _fmt(noise), _fmt(med), "" if cfg.omit_timing else _fmt(wt), n_ok])
    return paths


# ---------------------------------------------------------------- error curves

def error_curves(cfg: ExperimentConfig, out_dir: Path) -> dict[str, Path]:
    """True and estimated error curves, a noisy envelope, and the (r, p) surface."""
    system = cfg.load_system()
    clean = clean_trajectory(cfg, system)
    paths = {k: out_dir / f"{k}.csv" for k in ("curves", "envelope", "surface", "markers")}

    with paths["curves"].open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "S", "p", "r", "K", "value", "r_hat_c"])
        curves = [("true", "", true_eint_curve(system, clean, cfg.p, cfg.stride))]
        curves += [("estimated", S, ehat_curve(clean, cfg.p, EulerMaclaurinConfig(S), cfg.stride)) for S in (1, 2)]
        for kind, S, c in curves:
            r_hat = detect_changepoint(c.radii, c.log_values()).x
            for r, K, v in zip(c.radii, c.counts, c.values):
                w.writerow([kind, S, cfg.p, _fmt(float(r)), int(K), _fmt(float(v)), _fmt(float(r_hat))])

    noise = cfg.noise[0] if cfg.noise else 0.0
    stack, r_hats = [], []
    for i in range(cfg.trials):
        c = ehat_curve(noisy_trial(clean, cfg, noise, i), cfg.p, cfg.em_config(), cfg.stride)
        stack.append(c.values)
        r_hats.append(detect_changepoint(c.radii, c.log_values()).x)
    stack = np.array(stack)
    with paths["envelope"].open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["noise", "r", "min", "median", "max"])
        for j, r in enumerate(c.radii):
            w.writerow([_fmt(noise), _fmt(float(r)), _fmt(float(stack[:, j].min())),
                        _fmt(float(np.median(stack[:, j]))), _fmt(float(stack[:, j].max()))])

    with paths["surface"].open("w", newline="") as fh, paths["markers"].open("w", newline="") as fm:
        w, wm = csv.writer(fh), csv.writer(fm)
        w.writerow(["p", "r", "value"])
        wm.writerow(["p", "r_hat_c", "e_at_r_hat_c", "min_e"])
        for p in cfg.surface_orders:
            tc = true_eint_curve(system, clean, p, cfg.stride)
            for r, v in zip(tc.radii, tc.values):
                w.writerow([p, _fmt(float(r)), _fmt(float(v))])
            r_hat = sl_select(clean, p, cfg.em_config(), cfg.stride).r_hat_c
            wm.writerow([p, _fmt(r_hat), _fmt(tc.at(r_hat)), _fmt(float(tc.values.min()))])

    paths["noisy_critical"] = out_dir / "noisy_critical_radii.csv"
    with paths["noisy_critical"].open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["noise", "trial", "r_hat_c"])
        for i, r in enumerate(r_hats):
            w.writerow([_fmt(noise), i, _fmt(float(r))])
    return paths


def write_metadata(out_dir: Path, command: str, cfg: ExperimentConfig, extra: dict | None = None) -> Path:
    """Run metadata, the only output that carries wall-clock timestamps."""
    meta = {
        "command": command,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config": asdict(cfg),
    }
    meta.update(extra or {})
    path = out_dir / f"{command}_metadata.json"
    path.write_text(json.dumps(meta, indent=2, default=str) + "\n")
    return path
