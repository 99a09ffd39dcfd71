"""Report figures: per-region EER bars and ROC curves, rendered to files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from . import metrics
from .regions import ALL_REGIONS


def render_eer_bars(reports, path: str | Path) -> Path:
    """Grouped bar chart of EER (%) per region, one group per report row."""
    path = Path(path)
    regions = [r.value for r in ALL_REGIONS if r.value in reports[0].region_metrics]
    fig, ax = plt.subplots(figsize=(1.8 + 1.2 * len(regions), 3.4))
    width = 0.8 / max(len(reports), 1)
    for i, rep in enumerate(reports):
        xs = [j + i * width for j in range(len(regions))]
        ys = [100 * rep.region_metrics[r][0] for r in regions]
        ax.bar(xs, ys, width=width, label=f"{rep.database} ({rep.architecture})")
    ax.set_xticks([j + 0.4 - width / 2 for j in range(len(regions))])
    ax.set_xticklabels(regions)
    ax.set_ylabel("EER (%)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_roc_curves(scores_by_region: dict, path: str | Path) -> Path:
    """Overlayed ROC curves (TPR vs FPR), one per region."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(4.2, 4.0))
    for region in sorted(scores_by_region):
        curve = metrics.roc(scores_by_region[region])
        pts = sorted(curve.points)
        fpr = [p[1] for p in pts]
        tpr = [1.0 - p[2] for p in pts]
        ax.plot(fpr, tpr, label=region)
    ax.plot([0, 1], [0, 1], ls="--", c="gray", lw=0.8)
    ax.set_xlabel("False acceptance rate")
    ax.set_ylabel("True detection rate")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
