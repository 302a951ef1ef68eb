"""Report writers: JSON, delimited CSV, aligned text tables, and figures.

Every report lands as a trio ``<base>.json`` / ``<base>.csv`` /
``<base>.txt`` plus PNG figures rendered next to them; figures can be
switched off for headless byte-for-byte comparisons.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .evaluation import AblationRow, MetricsReport  # noqa: E402

REPORT_SCHEMA_VERSION = 1


def text_table(headers: Sequence[str], rows: Sequence[Sequence]) -> str:
    cells = [[str(h) for h in headers]] + [[("" if v is None else str(v)) for v in row]
                                           for row in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(headers))]
    lines = []
    for r, row in enumerate(cells):
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
        if r == 0:
            lines.append("  ".join("-" * widths[i] for i in range(len(headers))))
    return "\n".join(lines)


def fmt_value(value) -> str:
    if isinstance(value, float):
        return f"{value:.4f}"
    return "" if value is None else str(value)


def metric_rows(report: MetricsReport) -> list[tuple[str, str]]:
    doc = report.to_dict()
    rows = []
    for key in ("protocol", "n_cases", "n_failed", "balanced_accuracy", "accuracy",
                "initial_bacc", "ddx_bacc", "ddx_length", "final_bacc",
                "grade_accuracy", "gleason_primary_accuracy",
                "gleason_combined_accuracy", "invasion_precision",
                "invasion_recall", "invasion_f1"):
        if doc.get(key) is not None:
            rows.append((key, fmt_value(doc[key])))
    for task, rate in report.pemr_rates.items():
        rows.append((f"pemr_{task}", fmt_value(rate)))
    for cls, recall in report.per_class_recall.items():
        rows.append((f"recall[{cls}]", fmt_value(recall)))
    if report.failed_case_ids:
        rows.append(("failed_cases", ";".join(report.failed_case_ids)))
    return rows


def write_metrics_report(report: MetricsReport, base: str | Path,
                         figures: bool = True) -> dict[str, Path]:
    base = Path(base)
    base.parent.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}

    doc = {"schema_version": REPORT_SCHEMA_VERSION, "kind": "metrics",
           **report.to_dict()}
    paths["json"] = base.with_suffix(".json")
    paths["json"].write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

    rows = metric_rows(report)
    paths["csv"] = base.with_suffix(".csv")
    with open(paths["csv"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        writer.writerows(rows)

    paths["txt"] = base.with_suffix(".txt")
    paths["txt"].write_text(text_table(["metric", "value"], rows) + "\n")

    if figures and report.per_class_recall:
        paths["figure"] = base.parent / f"{base.name}_recalls.png"
        _recall_figure(report, paths["figure"])
    return paths


def _recall_figure(report: MetricsReport, path: Path) -> None:
    labels = list(report.per_class_recall)
    values = [report.per_class_recall[c] for c in labels]
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(labels)), 3.2))
    ax.bar(range(len(labels)), values, color="#4878a8")
    if report.balanced_accuracy is not None:
        ax.axhline(report.balanced_accuracy, color="#b04a4a", linestyle="--",
                   linewidth=1, label=f"balanced acc {report.balanced_accuracy:.2f}")
        ax.legend(loc="lower right", fontsize=8)
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels([l[:24] for l in labels], rotation=20, ha="right", fontsize=7)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("recall")
    ax.set_title(f"per-class recall ({report.protocol})", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def ablation_headers(rows: Sequence[AblationRow]) -> list[str]:
    keys: list[str] = []
    for row in rows:
        for key in row.cell:
            if key not in keys:
                keys.append(key)
    return keys


def write_ablation_report(axis: str, rows: Sequence[AblationRow],
                          base: str | Path, figures: bool = True) -> dict[str, Path]:
    base = Path(base)
    base.parent.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}

    doc = {"schema_version": REPORT_SCHEMA_VERSION, "kind": "ablation",
           "axis": axis, "rows": [row.to_dict() for row in rows]}
    paths["json"] = base.with_suffix(".json")
    paths["json"].write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

    cell_keys = ablation_headers(rows)
    headers = cell_keys + ["n_cases", "balanced_accuracy", "accuracy"]
    table_rows = [
        [row.cell.get(k) for k in cell_keys]
        + [row.report.n_cases, fmt_value(row.report.balanced_accuracy),
           fmt_value(row.report.accuracy)]
        for row in rows
    ]
    paths["csv"] = base.with_suffix(".csv")
    with open(paths["csv"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(headers)
        writer.writerows(table_rows)
    paths["txt"] = base.with_suffix(".txt")
    paths["txt"].write_text(text_table(headers, table_rows) + "\n")

    if figures:
        paths["figure"] = base.parent / f"{base.name}_{axis}.png"
        _ablation_figure(axis, rows, cell_keys, paths["figure"])
    return paths


def _ablation_figure(axis: str, rows: Sequence[AblationRow],
                     cell_keys: Sequence[str], path: Path) -> None:
    labels = [", ".join(f"{k}={row.cell[k]}" for k in cell_keys if k in row.cell)
              for row in rows]
    values = [row.report.balanced_accuracy or 0.0 for row in rows]
    fig, ax = plt.subplots(figsize=(max(4, 1.4 * len(rows)), 3.2))
    ax.bar(range(len(rows)), values, color="#5a9367")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, rotation=15, ha="right", fontsize=7)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("balanced accuracy")
    ax.set_title(f"ablation: {axis}", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_grid_figure(grid: Mapping[tuple[int, int], str], path: str | Path,
                      title: str = "patch grid") -> Path:
    """Render a patch-grid label map (one cell per patch) to a PNG."""
    path = Path(path)
    labels = sorted(set(grid.values()))
    index = {label: i for i, label in enumerate(labels)}
    xs = [x for x, _ in grid]
    ys = [y for _, y in grid]
    width, height = max(xs) + 1, max(ys) + 1
    data = [[float("nan")] * width for _ in range(height)]
    for (x, y), label in grid.items():
        data[y][x] = index[label]
    fig, ax = plt.subplots(figsize=(max(3, width / 4), max(2.4, height / 4)))
    im = ax.imshow(data, cmap="tab10", vmin=0, vmax=max(9, len(labels) - 1))
    ax.set_title(title, fontsize=9)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    colors = [im.cmap(im.norm(index[l])) for l in labels]
    handles = [plt.Rectangle((0, 0), 1, 1, color=c) for c in colors]
    ax.legend(handles, labels, fontsize=6, loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
