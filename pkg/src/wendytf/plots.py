"""Optional PNG renderings of the experiment CSVs.

Only used behind ``--plot``; the CSVs are the primary output and carry
everything shown here. Requires matplotlib (``pip install artifact[plot]``).
"""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _rows(path):
    with Path(path).open() as fh:
        return list(csv.DictReader(fh))


def _median(vals):
    vals = sorted(v for v in vals if v == v)
    if not vals:
        return float("nan")
    n = len(vals)
    return vals[n // 2] if n % 2 else 0.5 * (vals[n // 2 - 1] + vals[n // 2])


def plot_sweep(long_csv, critical_csv, out_dir) -> list[Path]:
    plt = _pyplot()
    groups = defaultdict(lambda: defaultdict(list))
    for row in _rows(long_csv):
        groups[(row["method"], float(row["noise"]))][float(row["r"])].append(float(row["E2"]))
    r_hat = defaultdict(list)
    for row in _rows(critical_csv):
        r_hat[float(row["noise"])].append(float(row["r_hat_c"]))
    paths = []
    for method in sorted({m for m, _ in groups}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for (m, noise), by_r in sorted(groups.items()):
            if m != method:
                continue
            radii = sorted(by_r)
            line, = ax.semilogy(radii, [_median(by_r[r]) for r in radii], label=f"{noise:g}")
            ax.axvline(_median(r_hat[noise]), color=line.get_color(), ls="--", lw=0.8)
        ax.set_xlabel("radius r")
        ax.set_ylabel("median E2")
        ax.set_title(method.upper())
        ax.legend(title="noise", fontsize=7)
        path = Path(out_dir) / f"sweep_{method}.png"
        fig.savefig(path, dpi=120, bbox_inches="tight")
        plt.close(fig)
        paths.append(path)
    return paths


def plot_error_curves(curves_csv, envelope_csv, out_dir) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    series = defaultdict(lambda: ([], []))
    for row in _rows(curves_csv):
        key = "e (true)" if row["kind"] == "true" else f"ê, S={row['S']}"
        series[key][0].append(float(row["r"]))
        series[key][1].append(float(row["value"]))
    env = _rows(envelope_csv)
    ax.fill_between([float(r["r"]) for r in env], [float(r["min"]) for r in env],
                    [float(r["max"]) for r in env], alpha=0.25, label="noisy ê range")
    for key, (r, v) in series.items():
        ax.semilogy(r, v, label=key, ls="-" if key.startswith("e ") else "--")
    ax.set_xlabel("radius r")
    ax.set_ylabel("integration error")
    ax.legend(fontsize=7)
    path = Path(out_dir) / "error_curves.png"
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_compare(long_csv, out_dir) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    pts = defaultdict(lambda: ([], []))
    for row in _rows(long_csv):
        if row["walltime_ms"] and row["E2"] != "nan":
            pts[(row["method"], row["noise"])][0].append(float(row["walltime_ms"]))
            pts[(row["method"], row["noise"])][1].append(float(row["E2"]))
    for (method, noise), (t, e) in sorted(pts.items()):
        ax.loglog(t, e, "o", ms=3, alpha=0.6, label=f"{method} @ {noise}")
    ax.set_xlabel("walltime (ms)")
    ax.set_ylabel("E2")
    ax.legend(fontsize=7)
    path = Path(out_dir) / "compare.png"
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path
