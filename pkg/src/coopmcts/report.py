"""Evaluation reports: delimited tables plus rendered figures.

Writes ``success_table.csv`` / ``success_table.json`` and, next to them, one
heatmap SVG per scenario (strategy x iterations) and an aggregate
success-vs-iterations curve figure.  The CSV carries only deterministic
columns; wall-clock means live in the JSON.
"""
from __future__ import annotations

import csv
import json
import os
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .experiment import CellResult

CSV_COLUMNS = ("scenario", "strategy", "iterations", "runs", "successes",
               "success_rate")


def write_csv(rows: Sequence[CellResult], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in rows:
            writer.writerow([r.scenario, r.strategy, r.iterations, r.runs,
                             r.successes, repr(r.success_rate)])


def read_csv(path) -> list[CellResult]:
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(CellResult(
                scenario=rec["scenario"], strategy=rec["strategy"],
                iterations=int(rec["iterations"]), runs=int(rec["runs"]),
                successes=int(rec["successes"]), mean_wall_time_ms=0.0))
    return rows


def write_json(rows: Sequence[CellResult], path) -> None:
    doc = [{"scenario": r.scenario, "strategy": r.strategy,
            "iterations": r.iterations, "runs": r.runs,
            "successes": r.successes, "success_rate": r.success_rate,
            "mean_wall_time_ms": r.mean_wall_time_ms} for r in rows]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path) -> list[CellResult]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return [CellResult(scenario=d["scenario"], strategy=d["strategy"],
                       iterations=int(d["iterations"]), runs=int(d["runs"]),
                       successes=int(d["successes"]),
                       mean_wall_time_ms=float(d["mean_wall_time_ms"]))
            for d in doc]


def aggregate_rates(rows: Sequence[CellResult]
                    ) -> dict[str, list[tuple[int, float]]]:
    """Per strategy: iteration-sorted mean success rate over scenarios."""
    grouped: dict[tuple[str, int], list[float]] = {}
    for r in rows:
        grouped.setdefault((r.strategy, r.iterations), []).append(r.success_rate)
    curves: dict[str, list[tuple[int, float]]] = {}
    for (strategy, iterations), rates in sorted(grouped.items()):
        curves.setdefault(strategy, []).append(
            (iterations, sum(rates) / len(rates)))
    for pts in curves.values():
        pts.sort()
    return curves


def render_heatmap(rows: Sequence[CellResult], scenario: str, path) -> None:
    sub = [r for r in rows if r.scenario == scenario]
    strategies = sorted({r.strategy for r in sub})
    iteration_values = sorted({r.iterations for r in sub})
    mat = np.full((len(strategies), len(iteration_values)), np.nan)
    for r in sub:
        mat[strategies.index(r.strategy),
            iteration_values.index(r.iterations)] = r.success_rate
    fig, ax = plt.subplots(figsize=(1.4 + 0.9 * len(iteration_values),
                                    1.2 + 0.5 * len(strategies)))
    im = ax.imshow(mat, vmin=0.0, vmax=1.0, cmap="RdYlGn", aspect="auto")
    ax.set_xticks(range(len(iteration_values)), iteration_values)
    ax.set_yticks(range(len(strategies)), strategies)
    ax.set_xlabel("search iterations")
    ax.set_title(f"success rate: {scenario}")
    for i in range(len(strategies)):
        for j in range(len(iteration_values)):
            if not np.isnan(mat[i, j]):
                ax.text(j, i, f"{mat[i, j]:.2f}", ha="center", va="center",
                        fontsize=8)
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)


def render_curves(rows: Sequence[CellResult], path) -> None:
    curves = aggregate_rates(rows)
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for strategy, pts in sorted(curves.items()):
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        line, = ax.plot(xs, ys, marker="o", label=strategy)
        line.set_gid(f"curve-{strategy}")
    if any(len(pts) > 1 for pts in curves.values()):
        ax.set_xscale("log", base=2)
    ax.set_xlabel("search iterations")
    ax.set_ylabel("mean success rate over scenarios")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)


def write_report(rows: Sequence[CellResult], out_dir) -> dict[str, str]:
    """Emit CSV + JSON + SVG figures into ``out_dir``; returns written paths."""
    if not rows:
        raise ValueError("no result rows to report")
    os.makedirs(out_dir, exist_ok=True)
    out = os.fspath(out_dir)
    paths = {"csv": os.path.join(out, "success_table.csv"),
             "json": os.path.join(out, "success_table.json"),
             "curves": os.path.join(out, "success_vs_iterations.svg")}
    write_csv(rows, paths["csv"])
    write_json(rows, paths["json"])
    render_curves(rows, paths["curves"])
    for scenario in sorted({r.scenario for r in rows}):
        p = os.path.join(out, f"heatmap_{scenario}.svg")
        render_heatmap(rows, scenario, p)
        paths[f"heatmap_{scenario}"] = p
    return paths
