"""CSV / JSON emission and matplotlib figures for experiment outputs."""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .experiment import BACKEND_COLUMNS, COMPARISON_COLUMNS, TIMESERIES_COLUMNS, RunResult  # noqa: E402
from .exposition import render  # noqa: E402

COLORS = {"clients": "tab:blue", "replicas": "tab:orange", "latency": "tab:green", "dynamic": "tab:red", "static": "tab:blue"}


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(round(v, 9))
    return str(v)


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[dict]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row[c]) for c in columns])


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def plot_timeseries(result: RunResult, path: Path) -> None:
    ts = result.timeseries
    t = [r["time_s"] for r in ts]
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.step(t, [r["client_count"] for r in ts], where="post", color=COLORS["clients"], label="clients")
    ax.step(t, [r["provisioned_replicas"] for r in ts], where="post", color=COLORS["replicas"], label="GPU servers")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("count")
    ax2 = ax.twinx()
    ax2.plot(
        t,
        [float("nan") if r["avg_queue_latency_s"] is None else r["avg_queue_latency_s"] * 1e3 for r in ts],
        color=COLORS["latency"],
        label="avg queue latency",
    )
    ax2.set_ylabel("queue latency [ms]")
    handles = ax.get_legend_handles_labels()[0] + ax2.get_legend_handles_labels()[0]
    ax.legend(handles, [h.get_label() for h in handles], loc="upper right", frameon=False)
    ax.set_title(result.config.label or "run")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_comparison(rows: list[dict], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    for r in rows:
        dyn = not r["label"].startswith("static")
        ax.scatter(
            r["mean_gpu_utilization"] * 100,
            r["mean_latency_s"] * 1e3,
            color=COLORS["dynamic" if dyn else "static"],
            zorder=3,
        )
        ax.annotate(r["label"], (r["mean_gpu_utilization"] * 100, r["mean_latency_s"] * 1e3),
                    textcoords="offset points", xytext=(4, 4), fontsize=8)
    ax.set_xlabel("mean GPU utilization [%]")
    ax.set_ylabel("mean latency [ms]")
    ax.set_yscale("log")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_run(result: RunResult, out_dir: str | Path, figures: bool = True) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "timeseries.csv", TIMESERIES_COLUMNS, result.timeseries)
    write_csv(out / "backends.csv", BACKEND_COLUMNS, result.backend_rows)
    write_json(out / "summary.json", result.summary)
    if result.metrics is not None:
        (out / "metrics.prom").write_text(render(result.metrics))
    if figures:
        plot_timeseries(result, out / "timeseries.png")
    return out


def write_comparison(rows: list[dict], results: list[RunResult], out_dir: str | Path, figures: bool = True) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "comparison.csv", COMPARISON_COLUMNS, rows)
    for res in results:
        write_run(res, out / res.config.label, figures=figures)
    if figures:
        plot_comparison(rows, out / "comparison.png")
    return out
