"""Report rendering: aligned text tables, delimited data series, and the
matplotlib figures saved alongside them.

Every figure has a delimited twin (CSV/TSV) carrying the same numbers, so
downstream tooling never has to scrape pixels.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .analysis import VotingCurvePoint


def write_json(path: str | Path, payload: dict) -> None:
    """Deterministic JSON: sorted keys, fixed separators, trailing newline."""
    blob = json.dumps(payload, sort_keys=True, indent=2)
    Path(path).write_text(blob + "\n", encoding="utf-8")


def metrics_table(report: dict) -> str:
    """Aligned per-field table for one experiment report."""
    fields = report["spec"]["fields"]
    variants = [v for v in ("stage1", "stage2", "voted") if v in report["metrics"]]
    header = ["field"] + [f"{v} F1" for v in variants]
    rows = [header]
    for field_name in fields:
        row = [field_name]
        for variant in variants:
            f1 = report["metrics"][variant]["per_field"][field_name]["f1"]
            row.append(f"{100 * f1:.2f}")
        rows.append(row)
    macro = ["macro"] + [f"{100 * report['metrics'][v]['macro_f1']:.2f}" for v in variants]
    rows.append(macro)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)))
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def sweep_table(sweep: dict) -> str:
    lines = [f"vertical: {sweep['vertical']}  stage: {sweep['stage']}  "
             f"voting: {sweep['voting']}"]
    lines.append(f"{'k':>3}  {'mean F1':>8}  per-permutation")
    for key in sorted(sweep["cells"], key=int):
        cell = sweep["cells"][key]
        per_perm = " ".join(f"{100 * s:.1f}" for s in cell["per_permutation"])
        lines.append(f"{cell['k']:>3}  {100 * cell['mean_macro_f1']:>8.2f}  {per_perm}")
    return "\n".join(lines)


def sweep_to_csv(sweep: dict, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "permutation", "stage", "voting", "macro_f1"])
        for run in sweep["runs"]:
            writer.writerow([run["k"], run["permutation"], run["stage"],
                             run["voting"], f"{run['macro_f1']:.6f}"])


# ---------------------------------------------------------------------------
# data series + figures
# ---------------------------------------------------------------------------

def write_voting_curve(points: list[VotingCurvePoint], out_dir: Path,
                       figures: bool = True) -> None:
    fields = sorted(points[0].per_field) if points else []
    with open(out_dir / "voting_curve.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fraction", "macro_f1"] + fields)
        for p in points:
            writer.writerow([p.fraction, f"{p.macro_f1:.6f}"]
                            + [f"{p.per_field[f]:.6f}" for f in fields])
    if not figures:
        return
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = [p.fraction for p in points]
    ax.plot(xs, [100 * p.macro_f1 for p in points], "o-", label="macro")
    for field_name in fields:
        ax.plot(xs, [100 * p.per_field[field_name] for p in points],
                "--", alpha=0.6, label=field_name)
    ax.set_xlabel("fraction of pages used for site-level voting")
    ax.set_ylabel("page-level F1 (%)")
    ax.set_ylim(0, 102)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_dir / "voting_curve.png", dpi=150)
    plt.close(fig)


def write_distance_matrix(matrix: np.ndarray, fields: list[str], site_id: str,
                          out_dir: Path, figures: bool = True) -> None:
    with open(out_dir / f"distance_matrix_{site_id}.tsv", "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter="\t")
        writer.writerow(["field"] + fields)
        for field_name, row in zip(fields, matrix):
            writer.writerow([field_name] + [f"{v:.4f}" for v in row])
    if not figures:
        return
    fig, ax = plt.subplots(figsize=(4.5, 4))
    image = ax.imshow(matrix, cmap="PRGn", vmin=-1, vmax=1)
    ax.set_xticks(range(len(fields)), fields, rotation=45, ha="right", fontsize=8)
    ax.set_yticks(range(len(fields)), fields, fontsize=8)
    for r in range(len(fields)):
        for c in range(len(fields)):
            ax.text(c, r, f"{matrix[r, c]:.2f}", ha="center", va="center", fontsize=7)
    ax.set_title(f"normalized field distances: {site_id}", fontsize=9)
    fig.colorbar(image, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(out_dir / f"distance_matrix_{site_id}.png", dpi=150)
    plt.close(fig)


def write_field_f1(report: dict, out_dir: Path, figures: bool = True) -> None:
    fields = report["spec"]["fields"]
    variants = [v for v in ("stage1", "stage2", "voted") if v in report["metrics"]]
    with open(out_dir / "field_f1.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["field"] + variants)
        for field_name in fields:
            writer.writerow([field_name] + [
                f"{report['metrics'][v]['per_field'][field_name]['f1']:.6f}"
                for v in variants])
    if not figures:
        return
    fig, ax = plt.subplots(figsize=(6, 4))
    x = np.arange(len(fields))
    width = 0.8 / len(variants)
    for i, variant in enumerate(variants):
        values = [100 * report["metrics"][variant]["per_field"][f]["f1"] for f in fields]
        ax.bar(x + (i - (len(variants) - 1) / 2) * width, values, width, label=variant)
    ax.set_xticks(x, fields, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("page-level F1 (%)")
    ax.set_ylim(0, 102)
    ax.legend(fontsize=8)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_dir / "field_f1.png", dpi=150)
    plt.close(fig)
