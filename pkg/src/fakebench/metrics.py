"""Detection metrics: ROC, EER, AUC, score aggregation, and report rendering.

Score convention, frozen for the whole toolkit: higher score = more fake.
FAR(t) = fraction of real units scored strictly above t (false acceptances of
fakes... i.e. reals flagged fake); FRR(t) = fraction of fake units scored at
or below t. FAR is non-increasing and FRR non-decreasing in t.

EER is taken at the ROC operating point (one per distinct score, plus the
end-points) that minimizes |FAR - FRR|, reported as the mean of the two rates
there. This matches the limit of a dense threshold sweep over the empirical
step functions.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import (
    InconsistentRegions,
    MixedLabelsWithinVideo,
    SingleClass,
)
from .regions import FACIAL_REGIONS, ALL_REGIONS

LABELS = ("real", "fake")


@dataclass(frozen=True)
class ScoreEntry:
    unit_id: str
    score: float
    label: str  # "real" | "fake"

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"label must be real|fake, got {self.label!r}")


@dataclass(frozen=True)
class ScoreSet:
    """Labeled detection scores at frame or video level.

    Frame-level unit ids embed their video id as ``<video_id>#<frame_tag>``;
    aggregation groups on the part before the ``#``.
    """

    entries: tuple[ScoreEntry, ...]
    level: str = "frame"  # "frame" | "video"

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))

    def split_by_label(self) -> tuple[np.ndarray, np.ndarray]:
        """(real_scores, fake_scores); raises SingleClass if either is empty."""
        reals = np.array([e.score for e in self.entries if e.label == "real"])
        fakes = np.array([e.score for e in self.entries if e.label == "fake"])
        if len(reals) == 0 or len(fakes) == 0:
            raise SingleClass(
                f"need both labels, got {len(reals)} real / {len(fakes)} fake"
            )
        return reals, fakes


@dataclass(frozen=True)
class RocCurve:
    """Operating points (threshold, FAR, FRR), monotone in threshold."""

    points: tuple[tuple[float, float, float], ...]


def roc(scores: ScoreSet) -> RocCurve:
    """One operating point per distinct score plus a below-minimum end-point.

    The lowest threshold gives (FAR 1, FRR 0) and the highest (FAR 0, FRR 1).
    """
    reals, fakes = scores.split_by_label()
    thresholds = np.unique(np.concatenate([reals, fakes]))
    thresholds = np.concatenate([[thresholds[0] - 1.0], thresholds])
    points = []
    for t in thresholds:
        far = float(np.mean(reals > t))
        frr = float(np.mean(fakes <= t))
        points.append((float(t), far, frr))
    return RocCurve(tuple(points))


def auc(scores: ScoreSet) -> float:
    """Probability a random fake outscores a random real, ties counting 1/2."""
    reals, fakes = scores.split_by_label()
    ranks = rankdata(np.concatenate([fakes, reals]))
    n_f, n_r = len(fakes), len(reals)
    rank_sum = ranks[:n_f].sum()
    return float((rank_sum - n_f * (n_f + 1) / 2) / (n_f * n_r))


def eer(scores: ScoreSet) -> tuple[float, float]:
    """(EER, threshold) at the operating point where FAR and FRR meet."""
    curve = roc(scores)
    pts = np.array(curve.points)
    diffs = np.abs(pts[:, 1] - pts[:, 2])
    idx = int(np.argmin(diffs))
    rate = float((pts[idx, 1] + pts[idx, 2]) / 2)
    return rate, float(pts[idx, 0])


def aggregate_to_video(frame_scores: ScoreSet, method: str = "mean") -> ScoreSet:
    """Collapse frame scores to one score per video (mean, median, or max)."""
    if method not in ("mean", "median", "max"):
        raise ValueError(f"unknown aggregation method {method!r}")
    reduce = {"mean": np.mean, "median": np.median, "max": np.max}[method]
    groups: dict[str, list[ScoreEntry]] = {}
    for e in frame_scores.entries:
        groups.setdefault(e.unit_id.split("#", 1)[0], []).append(e)
    out = []
    for vid in sorted(groups):
        entries = groups[vid]
        labels = {e.label for e in entries}
        if len(labels) > 1:
            raise MixedLabelsWithinVideo(f"video {vid!r} mixes labels {sorted(labels)}")
        out.append(ScoreEntry(vid, float(reduce([e.score for e in entries])), entries[0].label))
    return ScoreSet(tuple(out), level="video")


def save_scores(scores: ScoreSet, path: str | Path) -> None:
    """Write the score CSV: ``unit_id,score,label,level``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["unit_id", "score", "label", "level"])
        for e in scores.entries:
            writer.writerow([e.unit_id, repr(float(e.score)), e.label, scores.level])


def load_scores(path: str | Path) -> ScoreSet:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows and rows[0] == ["unit_id", "score", "label", "level"]:
        rows = rows[1:]
    entries = tuple(ScoreEntry(r[0], float(r[1]), r[2]) for r in rows if r)
    level = rows[0][3] if rows else "frame"
    return ScoreSet(entries, level=level)


# --- reports -----------------------------------------------------------------


@dataclass(frozen=True)
class EvalReport:
    """Per-region EER/AUC results for one (database, architecture) pair.

    ``region_metrics`` maps region name -> (eer, auc) as ratios in [0, 1].
    best/worst are chosen by EER among the four facial regions (Face is the
    whole-crop baseline and not ranked).
    """

    database: str
    architecture: str
    region_metrics: dict[str, tuple[float, float]]
    notes: dict = field(default_factory=dict)

    @property
    def best_region(self) -> str:
        return self._rank()[0]

    @property
    def worst_region(self) -> str:
        return self._rank()[-1]

    def _rank(self) -> list[str]:
        facial = [r.value for r in FACIAL_REGIONS if r.value in self.region_metrics]
        if not facial:
            facial = sorted(self.region_metrics)
        return sorted(facial, key=lambda r: (self.region_metrics[r][0], r))


def report_from_scores(database: str, architecture: str,
                       scores_by_region: dict[str, ScoreSet],
                       notes: dict | None = None) -> EvalReport:
    metrics = {}
    for region, scores in scores_by_region.items():
        e, _ = eer(scores)
        metrics[region] = (e, auc(scores))
    return EvalReport(database, architecture, metrics, notes or {})


def _fmt_pct(x: float) -> str:
    return f"{100 * x:.2f}"


def render_report(reports: Sequence[EvalReport], format: str = "markdown") -> str:
    """Render the per-region comparison table.

    Layout: one row per (database, architecture), columns Face/Eyes/Nose/
    Mouth/Rest x (EER %, AUC %). The best EER in each row is bold; the best
    and worst facial regions are marked with ``(+)`` and ``(-)``. The JSON
    variant carries the same fields machine-readably. Output is
    byte-deterministic for equal inputs.
    """
    if not reports:
        raise ValueError("no reports to render")
    region_sets = {tuple(sorted(r.region_metrics)) for r in reports}
    if len(region_sets) > 1:
        raise InconsistentRegions(f"reports disagree on regions: {sorted(region_sets)}")
    regions = [r.value for r in ALL_REGIONS if r.value in reports[0].region_metrics]
    regions += sorted(set(reports[0].region_metrics) - set(regions))

    if format == "json":
        payload = []
        for rep in reports:
            payload.append({
                "database": rep.database,
                "architecture": rep.architecture,
                "regions": {
                    name: {"eer_pct": round(100 * m[0], 2), "auc_pct": round(100 * m[1], 2)}
                    for name, m in sorted(rep.region_metrics.items())
                },
                "best_region": rep.best_region,
                "worst_region": rep.worst_region,
                "notes": rep.notes,
            })
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if format != "markdown":
        raise ValueError(f"unknown report format {format!r}")

    header = ["Database (detector)"]
    for region in regions:
        header += [f"{region} EER (%)", f"{region} AUC (%)"]
    lines = [
        "| " + " | ".join(header) + " |",
        "|" + "---|" * len(header),
    ]
    for rep in reports:
        best_eer_region = min(rep.region_metrics, key=lambda r: (rep.region_metrics[r][0], r))
        row = [f"{rep.database} ({rep.architecture})"]
        for region in regions:
            e, a = rep.region_metrics[region]
            cell_e, cell_a = _fmt_pct(e), _fmt_pct(a)
            if region == best_eer_region:
                cell_e, cell_a = f"**{cell_e}**", f"**{cell_a}**"
            if region == rep.best_region:
                cell_e, cell_a = f"{cell_e} (+)", f"{cell_a} (+)"
            elif region == rep.worst_region and rep.worst_region != rep.best_region:
                cell_e, cell_a = f"{cell_e} (-)", f"{cell_a} (-)"
            row += [cell_e, cell_a]
        lines.append("| " + " | ".join(row) + " |")
    lines.append("")
    lines.append("Bold: best EER in the row. (+)/(-): best/worst facial region by EER.")
    leaked = [rep.database for rep in reports if rep.notes.get("identity_leaked")]
    for db in leaked:
        lines.append(
            f"WARNING: {db}: identity-leaked split; development and evaluation "
            "share identities, results are inflated."
        )
    return "\n".join(lines) + "\n"
