"""Figure rendering for the experiment CSV reports.

Every report path renders matplotlib figures to files next to the
delimited output; no interactive backends.
"""
from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_STYLE = {
    "figure.figsize": (6.0, 4.0),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 10,
    "legend.fontsize": 9,
}


def _read_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _save(fig, out_png: str | Path) -> Path:
    out_png = Path(out_png)
    fig.tight_layout()
    fig.savefig(out_png)
    plt.close(fig)
    return out_png


def plot_sweep(csv_path: str | Path, out_png: str | Path,
               xlabel: str | None = None, logy: bool = False) -> Path:
    """Mean total rate per scheme versus the sweep value."""
    rows = _read_csv(csv_path)
    series: dict[str, dict[float, list[float]]] = defaultdict(lambda: defaultdict(list))
    for r in rows:
        series[r["scheme"]][float(r["value"])].append(float(r["total_rate"]))
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        for scheme in sorted(series):
            xs = sorted(series[scheme])
            ys = [sum(series[scheme][x]) / len(series[scheme][x]) for x in xs]
            ax.plot(xs, ys, marker="o", label=scheme)
        ax.set_xlabel(xlabel or (rows[0]["param"] if rows else "value"))
        ax.set_ylabel("weighted sum-rate (bits/s/Hz)")
        if logy:
            ax.set_yscale("log")
        ax.legend()
        return _save(fig, out_png)


def plot_convergence(bcd_csv: str | Path, ssca_csv: str | Path,
                     out_png: str | Path) -> Path:
    """Short-term objective/rate trace and long-term rate trace."""
    bcd = _read_csv(bcd_csv)
    ssca = _read_csv(ssca_csv)
    with plt.rc_context(_STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.0, 3.6))
        it = [int(r["iteration"]) for r in bcd]
        ax1.plot(it, [float(r["sum_rate"]) for r in bcd], label="sum-rate")
        ax1.set_xlabel("short-term iteration")
        ax1.set_ylabel("weighted sum-rate (bits/s/Hz)")
        ax1b = ax1.twinx()
        ax1b.plot(it, [float(r["objective"]) for r in bcd], color="tab:red",
                  alpha=0.6, label="objective")
        ax1b.set_ylabel("weighted-MSE objective")
        ax1.legend(loc="lower right")
        it2 = [int(r["iteration"]) for r in ssca]
        ax2.plot(it2, [float(r["batch_sum_rate"]) for r in ssca])
        ax2.set_xlabel("long-term iteration")
        ax2.set_ylabel("batch-average sum-rate (bits/s/Hz)")
        return _save(fig, out_png)


def plot_overhead(csv_path: str | Path, out_png: str | Path) -> Path:
    """Signaling bits of both protocols versus element count."""
    rows = _read_csv(csv_path)
    xs = [int(r["elements"]) for r in rows]
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ax.plot(xs, [int(r["single_timescale_bits"]) for r in rows],
                marker="o", label="single-timescale")
        ax.plot(xs, [int(r["mixed_timescale_bits"]) for r in rows],
                marker="s", label="mixed-timescale")
        ax.set_xlabel("reflecting elements")
        ax.set_ylabel("CSI signaling bits per block")
        ax.set_yscale("log")
        ax.legend()
        return _save(fig, out_png)


def plot_training(csv_path: str | Path, out_png: str | Path) -> Path:
    """Training loss and held-out sum-rate over SGD steps."""
    rows = _read_csv(csv_path)
    steps = [int(r["step"]) for r in rows]
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ax.plot(steps, [float(r["loss"]) for r in rows], label="training loss")
        held = [(int(r["step"]), float(r["holdout_sum_rate"])) for r in rows
                if r["holdout_sum_rate"]]
        if held:
            ax2 = ax.twinx()
            ax2.plot(*zip(*held), color="tab:green", label="held-out sum-rate")
            ax2.set_ylabel("held-out sum-rate (bits/s/Hz)")
        ax.set_xlabel("SGD step")
        ax.set_ylabel("loss")
        ax.legend(loc="upper right")
        return _save(fig, out_png)
