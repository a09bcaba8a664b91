"""Command-line experiment runner.

Exit status: 0 on success, 1 on a configuration error, 2 on a numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import experiments as ex
from .grid import NoiseSpec, NoiseConvention, Trajectory, add_noise, e2_metric
from .integration_error import ConsistencyError
from .regression import IrlsConfig, assemble_weak_system, wendy_irls, wendy_ols
from .selection import SelectionError, mg_select, sl_select, write_selection_json
from .systems import FeatureEvaluationError, SimulationError

log = logging.getLogger("wendytf")

NUMERICAL_ERRORS = (SimulationError, FeatureEvaluationError, ConsistencyError, SelectionError,
                    np.linalg.LinAlgError, FloatingPointError)


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _sweep(text: str) -> dict:
    """Either a START:STOP[:STEP] range or an explicit comma list, as config overrides."""
    if ":" not in text:
        return {"radii": tuple(int(v) for v in text.split(",") if v.strip())}
    parts = [int(v) for v in text.split(":")]
    if len(parts) == 2:
        parts.append(1)
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected START:STOP[:STEP] or a comma list, in grid steps")
    return {"sweep": tuple(parts), "radii": None}


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    p.add_argument("--config", default=S, help="YAML experiment file")
    p.add_argument("--seed", type=int, default=S, help="base seed; trial i uses seed + i")
    p.add_argument("--out-dir", dest="out_dir", default=S)
    p.add_argument("--trials", type=int, default=S)
    p.add_argument("--threads", type=int, default=S, help="worker processes for trials")
    p.add_argument("--system", default=S, help="builtin system name")
    p.add_argument("--system-file", dest="system_file", default=S, help="YAML system definition")
    p.add_argument("--M", type=int, default=S, help="number of grid intervals")
    p.add_argument("--T", type=float, default=S, help="override the time span")
    p.add_argument("--noise", type=_float_list, default=S, help="comma-separated noise ratios")
    p.add_argument("--convention", choices=[c.value for c in NoiseConvention], default=S)
    p.add_argument("--p", type=int, default=S, help="polynomial order")
    p.add_argument("--S", type=int, default=S, help="Euler-Maclaurin truncation order")
    p.add_argument("--stride", type=int, default=S, help="center spacing in grid steps")
    p.add_argument("--eta", type=float, default=S)
    p.add_argument("--s", type=float, default=S, help="coarsening factor for the global method")
    p.add_argument("--omit-timing", dest="omit_timing", action="store_true", default=S,
                   help="blank the walltime columns so CSVs are byte-reproducible")
    p.add_argument("-v", "--verbose", action="store_true", default=S)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="wendytf", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate", parents=[common],
                   help="write the clean trajectory, plus one noisy copy per --noise level")

    sp = sub.add_parser("select", parents=[common], help="choose a test-function set for one dataset")
    sp.add_argument("--method", choices=["sl", "mg"], default="sl")
    sp.add_argument("--data", help="trajectory CSV (t,u1..ud); simulated from the system when omitted")

    sp = sub.add_parser("estimate", parents=[common], help="fit parameters on one dataset")
    sp.add_argument("--method", choices=["sl", "mg"], default="sl")
    sp.add_argument("--regression", choices=list(ex.REGRESSIONS), default="irls")
    sp.add_argument("--data", help="trajectory CSV (t,u1..ud); simulated from the system when omitted")

    sp = sub.add_parser("sweep-radius", parents=[common], help="E2 across fixed radii, OLS and IRLS")
    sp.add_argument("--radii", type=_sweep, default=None, help="START:STOP[:STEP] or m1,m2,... in grid steps")
    sp.add_argument("--plot", action="store_true", help="also render PNG figures (needs matplotlib)")

    sp = sub.add_parser("error-curves", parents=[common], help="true and estimated integration error curves")
    sp.add_argument("--orders", type=lambda t: tuple(int(v) for v in t.split(",")), default=None,
                    help="polynomial orders for the (r, p) surface")
    sp.add_argument("--plot", action="store_true", help="also render PNG figures (needs matplotlib)")

    sp = sub.add_parser("compare", parents=[common], help="SL versus MG with OLS and IRLS")
    sp.add_argument("--plot", action="store_true", help="also render PNG figures (needs matplotlib)")
    return parser


_CONFIG_KEYS = ("seed", "out_dir", "trials", "threads", "system", "system_file", "M", "T", "noise",
                "convention", "p", "S", "stride", "eta", "s", "omit_timing")


def resolve_config(args: argparse.Namespace) -> ex.ExperimentConfig:
    cfg = ex.load_config(args.config) if getattr(args, "config", None) else ex.ExperimentConfig()
    overrides = {k: getattr(args, k) for k in _CONFIG_KEYS if hasattr(args, k)}
    if getattr(args, "radii", None):
        overrides.update(args.radii)
    if getattr(args, "orders", None):
        overrides["surface_orders"] = args.orders
    try:
        return replace(cfg, **overrides)
    except TypeError as exc:
        raise ex.ConfigError(str(exc)) from exc


def _dataset(args, cfg: ex.ExperimentConfig, system) -> Trajectory:
    if getattr(args, "data", None):
        try:
            data = Trajectory.from_csv(args.data)
        except (OSError, ValueError) as exc:
            raise ex.ConfigError(f"cannot read {args.data}: {exc}") from exc
        if data.d != system.d:
            raise ex.ConfigError(f"{args.data} has {data.d} state columns, {system.name} needs {system.d}")
        return data
    noise = cfg.noise[0] if cfg.noise else 0.0
    return ex.noisy_trial(ex.clean_trajectory(cfg, system), cfg, noise, 0)


def cmd_simulate(args, cfg, out: Path) -> dict:
    system = cfg.load_system()
    clean = ex.clean_trajectory(cfg, system)
    path = out / f"{system.name}_M{cfg.M}.csv"
    clean.to_csv(path)
    files = [str(path)]
    requested = hasattr(args, "noise") or getattr(args, "config", None)
    for noise in cfg.noise if requested else ():
        if noise > 0:
            noisy = add_noise(clean, NoiseSpec(noise, cfg.seed, NoiseConvention(cfg.convention)))
            npath = out / f"{system.name}_M{cfg.M}_noise{noise:g}_seed{cfg.seed}.csv"
            noisy.to_csv(npath)
            files.append(str(npath))
    return {"files": files}


def _select(method, data, cfg):
    if method == "sl":
        return sl_select(data, cfg.p, cfg.em_config(), cfg.stride)
    return mg_select(data, cfg.eta, cfg.s)


def cmd_select(args, cfg, out: Path) -> dict:
    system = cfg.load_system()
    sel = _select(args.method, _dataset(args, cfg, system), cfg)
    curve_path = out / f"selection_{args.method}_curve.csv"
    sel.curve.to_csv(curve_path)
    json_path = out / f"selection_{args.method}.json"
    write_selection_json(sel, json_path, curve_path)
    print(json_path.read_text(), end="")
    return {"files": [str(curve_path), str(json_path)]}


def cmd_estimate(args, cfg, out: Path) -> dict:
    system = cfg.load_system()
    data = _dataset(args, cfg, system)
    sel = _select(args.method, data, cfg)
    ws = assemble_weak_system(system, data, sel.basis)
    res = wendy_ols(ws)
    if args.regression == "irls":
        res = wendy_irls(ws, system, data, sel.basis, IrlsConfig(), w0=res.w_hat)
    res.walltime_ms += sel.walltime_ms
    payload = res.to_dict(system.w_star)
    payload["selection"] = sel.to_dict()
    path = out / f"estimate_{args.method}_{args.regression}.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(json.dumps({k: payload[k] for k in ("w_hat", "E2", "iterations", "converged")}))
    return {"files": [str(path)]}


def cmd_sweep_radius(args, cfg, out: Path) -> dict:
    results = ex.sweep_radius(cfg)
    paths = ex.write_sweep(results, cfg, out)
    if args.plot:
        from .plots import plot_sweep
        plot_sweep(paths["long"], paths["critical"], out)
    return {"files": [str(p) for p in paths.values()]}


def cmd_error_curves(args, cfg, out: Path) -> dict:
    paths = ex.error_curves(cfg, out)
    if args.plot:
        from .plots import plot_error_curves
        plot_error_curves(paths["curves"], paths["envelope"], out)
    return {"files": [str(p) for p in paths.values()]}


def cmd_compare(args, cfg, out: Path) -> dict:
    paths = ex.write_compare(ex.compare(cfg), cfg, out)
    if args.plot:
        from .plots import plot_compare
        plot_compare(paths["long"], out)
    return {"files": [str(p) for p in paths.values()]}


COMMANDS = {
    "simulate": cmd_simulate,
    "select": cmd_select,
    "estimate": cmd_estimate,
    "sweep-radius": cmd_sweep_radius,
    "error-curves": cmd_error_curves,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        extra = COMMANDS[args.command](args, cfg, out)
        ex.write_metadata(out, args.command.replace("-", "_"), cfg, extra)
    except ex.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except ImportError as exc:
        print(f"missing optional dependency: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
