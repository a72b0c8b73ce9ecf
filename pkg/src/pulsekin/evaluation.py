"""Pair scoring into ROC/AUC reports, aggregation, CSV and SVG emission.

Distances are negated (not inverted) to obtain similarity scores: AUC only
needs a monotone transform and negation has no pole at zero distance. AUC is
the Mann-Whitney rank statistic (probability that a random kin pair scores
more kin-like than a random non-kin pair, ties counted half), which equals
the trapezoidal area under the tie-aware ROC exactly.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .errors import ClassError
from .fileio import write_bytes_atomic, write_text_atomic
from .training import ScoreRow

SVG_HASHSALT = "pulsekin"
SVG_SIZE = (640, 480)

# Published benchmark on the license-gated source dataset (mean AUC % and
# population std across the seven relations). Reference annotation only,
# never an acceptance target: that data cannot be redistributed.
REFERENCE_BENCHMARKS = {
    "lgi": (60.88, 6.80),
    "omit": (64.65, 8.66),
    "green": (67.93, 9.45),
    "chrom": (68.82, 11.84),
    "pos": (69.28, 3.41),
}
REFERENCE_ABLATION_DELTAS = {
    "multi_over_single": 3.39,
    "attention_over_none": 1.66,
}


@dataclass
class EvalReport:
    relation: str
    scores: list[tuple[float, int]]  # (distance, label)
    roc_points: list[tuple[float, float]]  # (fpr, tpr)
    auc: float
    n_pos: int
    n_neg: int
    n_folds: int = 0

    def __post_init__(self):
        if not self.roc_points:
            raise ClassError("report without ROC points")
        if not 0.0 <= self.auc <= 1.0:
            raise ClassError(f"auc {self.auc} outside [0, 1]")


def _split_scores(scores) -> tuple[np.ndarray, np.ndarray, int]:
    if scores and isinstance(scores[0], ScoreRow):
        n_folds = len({s.fold for s in scores})
        pairs = [(s.distance, s.label) for s in scores]
    else:
        n_folds = 0
        pairs = list(scores)
    dist = np.array([p[0] for p in pairs], dtype=np.float64)
    labels = np.array([p[1] for p in pairs], dtype=np.int64)
    return dist, labels, n_folds


def rank_auc(similarity: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney AUC with average ranks (ties count one half)."""
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    ranks = rankdata(similarity, method="average")
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_points_from(similarity: np.ndarray, labels: np.ndarray) -> list[tuple[float, float]]:
    """Tie-aware ROC polyline from (0,0) to (1,1), thresholds descending."""
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    order = np.argsort(-similarity, kind="stable")
    sim_sorted = similarity[order]
    lab_sorted = labels[order]
    points = [(0.0, 0.0)]
    tp = fp = 0
    i = 0
    while i < sim_sorted.size:
        j = i
        while j < sim_sorted.size and sim_sorted[j] == sim_sorted[i]:
            tp += int(lab_sorted[j] == 1)
            fp += int(lab_sorted[j] == 0)
            j += 1
        points.append((fp / n_neg, tp / n_pos))
        i = j
    return points


def roc_auc(scores, relation: str = "") -> EvalReport:
    """Score set -> ROC points and rank-statistic AUC.

    ``scores`` is a list of (distance, label) tuples or ScoreRow records;
    lower distance means more kin-like. Raises ClassError unless both
    classes are present.
    """
    dist, labels, n_folds = _split_scores(scores)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ClassError(
            f"need both classes for ROC, got {n_pos} positives / {n_neg} negatives"
        )
    similarity = -dist
    return EvalReport(
        relation=relation,
        scores=[(float(d), int(l)) for d, l in zip(dist, labels)],
        roc_points=roc_points_from(similarity, labels),
        auc=rank_auc(similarity, labels),
        n_pos=n_pos,
        n_neg=n_neg,
        n_folds=n_folds,
    )


def trapezoid_auc(points: list[tuple[float, float]]) -> float:
    xs = np.array([p[0] for p in points])
    ys = np.array([p[1] for p in points])
    return float(np.trapezoid(ys, xs))


@dataclass
class AggregateSummary:
    reports: list[EvalReport]
    mean_auc: float
    std_auc: float  # population std

    @property
    def mean_percent(self) -> float:
        return 100.0 * self.mean_auc

    @property
    def std_percent(self) -> float:
        return 100.0 * self.std_auc


def aggregate_relations(reports: list[EvalReport]) -> AggregateSummary:
    """Mean and population standard deviation of per-relation AUCs."""
    if not reports:
        raise ClassError("no reports to aggregate")
    aucs = np.array([r.auc for r in reports])
    return AggregateSummary(
        reports=list(reports),
        mean_auc=float(aucs.mean()),
        std_auc=float(aucs.std()),
    )


def format_results_csv(summary: AggregateSummary, reference: str | None = None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["relation", "auc_percent", "n_pos", "n_neg", "n_folds"])
    for r in summary.reports:
        writer.writerow(
            [r.relation, f"{100.0 * r.auc:.2f}", r.n_pos, r.n_neg, r.n_folds]
        )
    writer.writerow(["MEAN", f"{summary.mean_percent:.2f}", "", "", ""])
    writer.writerow(["STD", f"{summary.std_percent:.2f}", "", "", ""])
    if reference in REFERENCE_BENCHMARKS:
        mean, std = REFERENCE_BENCHMARKS[reference]
        buf.write(
            f"# reference: published {reference.upper()} benchmark "
            f"{mean:.2f}+/-{std:.2f} on the license-gated source dataset; "
            "annotation only, not a target\n"
        )
    return buf.getvalue()


def write_results_csv(
    summary: AggregateSummary, path: str | Path, reference: str | None = None
) -> None:
    write_text_atomic(path, format_results_csv(summary, reference))


def format_scores_csv(scores: list[ScoreRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["relation", "fold", "subject_a", "subject_b", "label", "distance"])
    for s in scores:
        writer.writerow([s.relation, s.fold, s.subject_a, s.subject_b, s.label, repr(s.distance)])
    return buf.getvalue()


def write_scores_csv(scores: list[ScoreRow], path: str | Path) -> None:
    write_text_atomic(path, format_scores_csv(scores))


def read_scores_csv(path: str | Path) -> list[ScoreRow]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            rows.append(
                ScoreRow(
                    relation=rec["relation"],
                    fold=int(rec["fold"]),
                    subject_a=rec["subject_a"],
                    subject_b=rec["subject_b"],
                    label=int(rec["label"]),
                    distance=float(rec["distance"]),
                )
            )
    return rows


def render_roc_svg(
    reports: list[EvalReport] | EvalReport,
    title: str = "ROC",
) -> bytes:
    """Deterministic SVG 1.1 bytes (fixed hashsalt, no timestamp metadata)."""
    import matplotlib

    matplotlib.use("Agg", force=False)
    from matplotlib.backends.backend_svg import FigureCanvasSVG
    from matplotlib.figure import Figure

    if isinstance(reports, EvalReport):
        reports = [reports]
    if not reports:
        raise ClassError("nothing to plot")
    with matplotlib.rc_context({"svg.hashsalt": SVG_HASHSALT}):
        fig = Figure(figsize=(SVG_SIZE[0] / 72.0, SVG_SIZE[1] / 72.0))
        FigureCanvasSVG(fig)
        ax = fig.add_subplot(111)
        for report in reports:
            xs = [p[0] for p in report.roc_points]
            ys = [p[1] for p in report.roc_points]
            label = report.relation or "all"
            ax.plot(xs, ys, lw=1.6, label=f"{label} (AUC = {100 * report.auc:.2f}%)")
        ax.plot([0, 1], [0, 1], ls="--", lw=0.9, color="0.4", label="chance")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.02)
        ax.set_xlabel("False positive rate")
        ax.set_ylabel("True positive rate")
        ax.set_title(title)
        ax.legend(loc="lower right", fontsize=9)
        ax.grid(alpha=0.25)
        buf = io.BytesIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
    return buf.getvalue()


def emit_roc_plot(
    reports: list[EvalReport] | EvalReport,
    path: str | Path,
    title: str = "ROC",
) -> None:
    write_bytes_atomic(path, render_roc_svg(reports, title))
