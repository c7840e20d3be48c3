"""Report generation: delimited outputs plus rendered figures.

Every report is a pair: a CSV that downstream tooling (and the independent
verification script) consumes, and a PNG rendering of the same data for
humans.  Floats are written with repr (shortest round-trip form), so a
recomputation from the raw records reproduces the files byte for byte.
"""

from __future__ import annotations

import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .analysis import (OUTCOME_ORDER, RateTable, propagation_latency_cdf,
                       rate_table, rollback_distance_cdf)

RATE_HEADER = "workload,component,outcome,count,total,rate,ci_halfwidth"
CDF_HEADER = "x,cum_fraction"


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_rate_csv(table: RateTable, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(RATE_HEADER + "\n")
        for row in table.rows():
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_cdf_csv(points, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(CDF_HEADER + "\n")
        for x, frac in points:
            fh.write(f"{x},{repr(frac)}\n")


def render_rate_figure(table: RateTable, path: str) -> None:
    keys = sorted(table.cells)
    if not keys:
        fig, ax = plt.subplots(figsize=(6, 3))
        ax.set_title("outcome rates (no data)")
        fig.savefig(path)
        plt.close(fig)
        return
    fig, axes = plt.subplots(1, len(keys), figsize=(4.2 * len(keys), 3.4),
                             squeeze=False)
    for ax, key in zip(axes[0], keys):
        cells = table.cells[key]
        rates = [cells[o].rate for o in OUTCOME_ORDER]
        cis = [cells[o].ci for o in OUTCOME_ORDER]
        ax.bar(range(len(OUTCOME_ORDER)), rates, yerr=cis, capsize=3,
               color="steelblue")
        ax.set_xticks(range(len(OUTCOME_ORDER)))
        ax.set_xticklabels(OUTCOME_ORDER, rotation=30, fontsize=8)
        ax.set_yscale("log")
        ax.set_ylim(bottom=1e-4)
        ax.set_title(f"{key[0]} / {key[1]}", fontsize=9)
        ax.set_ylabel("rate")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_cdf_figure(points, title: str, xlabel: str, path: str) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    if points:
        xs = [p[0] for p in points]
        ys = [p[1] for p in points]
        ax.step(xs, ys, where="post")
        ax.set_xscale("symlog")
    ax.set_ylim(0, 1.02)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("cumulative fraction")
    ax.set_title(title, fontsize=10)
    ax.grid(alpha=0.4)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_curve_figure(curves, title: str, xlabel: str, ylabel: str,
                        path: str, hline: float | None = None) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for label, pts in curves:
        if pts:
            ax.plot([p[0] for p in pts], [p[1] for p in pts],
                    marker=".", lw=1, label=label)
    if hline is not None:
        ax.axhline(hline, color="red", ls="--", lw=1, label="threshold")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title, fontsize=10)
    if curves:
        ax.legend(fontsize=7)
    ax.grid(alpha=0.4)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def emit_campaign_report(records: list[dict], out_dir: str) -> dict[str, str]:
    """Rate table, latency CDF, rollback CDF: CSVs plus figures."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    table = rate_table(records)
    paths["rates_csv"] = os.path.join(out_dir, "rates.csv")
    write_rate_csv(table, paths["rates_csv"])
    paths["rates_png"] = os.path.join(out_dir, "rates.png")
    render_rate_figure(table, paths["rates_png"])

    lat = propagation_latency_cdf(records)
    paths["latency_csv"] = os.path.join(out_dir, "propagation_latency_cdf.csv")
    write_cdf_csv(lat, paths["latency_csv"])
    paths["latency_png"] = os.path.join(out_dir, "propagation_latency_cdf.png")
    render_cdf_figure(lat, "error propagation latency", "cycles from injection",
                      paths["latency_png"])

    rb = rollback_distance_cdf(records)
    paths["rollback_csv"] = os.path.join(out_dir, "rollback_distance_cdf.csv")
    write_cdf_csv(rb, paths["rollback_csv"])
    paths["rollback_png"] = os.path.join(out_dir, "rollback_distance_cdf.png")
    render_cdf_figure(rb, "required rollback distance", "cycles",
                      paths["rollback_png"])
    return paths
