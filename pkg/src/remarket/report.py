"""Load-report rendering: delimited output plus figures.

The CSV carries one row per product with its per-stage timings; the figure
summarizes the same data (total duration per pipeline stage, and stacked
per-product bars) the way the workload evaluation slices it.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .service import STAGES, LoadReport


def write_load_csv(report: LoadReport, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["product_id", "ok", *[f"{stage}_ms" for stage in STAGES], "error"])
        for timing in report.per_product:
            writer.writerow(
                [
                    timing.product_id,
                    int(timing.ok),
                    *[f"{timing.stages_ms.get(stage, 0.0):.3f}" for stage in STAGES],
                    timing.error,
                ]
            )
    return path


def render_load_figure(report: LoadReport, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, (ax_total, ax_products) = plt.subplots(1, 2, figsize=(11, 4.2))

    totals = [report.stage_totals_ms.get(stage, 0.0) for stage in STAGES]
    ax_total.bar(range(len(STAGES)), totals, color=["#4c72b0", "#dd8452", "#55a868"])
    ax_total.set_xticks(range(len(STAGES)))
    ax_total.set_xticklabels(STAGES, rotation=15)
    ax_total.set_ylabel("total duration (ms)")
    ax_total.set_title(f"Pipeline stage totals, n={report.n_products}")

    indices = range(1, len(report.per_product) + 1)
    bottom = [0.0] * len(report.per_product)
    for stage, color in zip(STAGES, ("#4c72b0", "#dd8452", "#55a868")):
        heights = [t.stages_ms.get(stage, 0.0) for t in report.per_product]
        ax_products.bar(indices, heights, bottom=bottom, label=stage, color=color, width=1.0)
        bottom = [b + h for b, h in zip(bottom, heights)]
    ax_products.set_xlabel("product")
    ax_products.set_ylabel("duration (ms)")
    ax_products.set_title("Per-product stage timings")
    ax_products.legend(fontsize=8)

    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
