"""Bar charts for evaluation reports, rendered off-screen to PNG."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps repeated renders byte-stable
_PNG_META = {"Software": None}


def grouped_bars(ax, rows: list[dict], metric: str, title: str) -> None:
    classes = list(dict.fromkeys(r["class"] for r in rows))
    methods = list(dict.fromkeys(r["method"] for r in rows))
    width = 0.8 / max(1, len(methods))
    x = np.arange(len(classes))
    for i, m in enumerate(methods):
        vals = [next((r[metric] for r in rows if r["class"] == c and r["method"] == m), 0.0)
                for c in classes]
        ax.bar(x + (i - (len(methods) - 1) / 2) * width, vals, width, label=m)
    ax.set_xticks(x)
    ax.set_xticklabels(classes, rotation=30, ha="right")
    ax.set_ylim(0, 1)
    ax.set_ylabel(metric)
    ax.set_title(title)
    ax.legend(frameon=False, fontsize="small")


def render_report_figures(report: dict, directory: str | Path, stem: str = "report") -> list[Path]:
    directory = Path(directory)
    paths = []
    panels = [("ranking", "map", "Property ranking (MAP)"),
              ("ranking", "prec@5", "Property ranking (prec@5)"),
              ("verification", "f1", "Fact verification (F1)")]
    for part, metric, title in panels:
        rows = report[part]["rows"] + report[part]["average"]
        if not rows:
            continue
        fig, ax = plt.subplots(figsize=(6.4, 3.6))
        grouped_bars(ax, rows, metric, title)
        fig.tight_layout()
        path = directory / f"{stem}_{part}_{metric.replace('@', '')}.png"
        fig.savefig(path, dpi=100, metadata=_PNG_META)
        plt.close(fig)
        paths.append(path)
    return paths
