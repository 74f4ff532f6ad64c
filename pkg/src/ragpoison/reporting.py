"""Report emission: JSON, fixed-column CSV tables, and matplotlib figures.

Every writer targets a directory and returns the paths it created, so the
CLI and tests can assert on outputs. Figures render headlessly (Agg) next
to the delimited files.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .defense import RocCurve
from .evaluation import EvalReport, report_to_json

# Column orders are part of the output contract; downstream parsing
# depends on them staying put.
AGGREGATE_COLUMNS = ("asr", "precision", "recall", "f1", "correct_rate", "mean_queries")
PER_CASE_COLUMNS = (
    "case_id",
    "question_used",
    "retrieved_poison_count",
    "generated_answer",
    "matched_target",
    "matched_correct",
    "precision",
    "recall",
    "f1",
)
SWEEP_COLUMNS = ("k", "n", "asr", "precision", "recall", "f1", "correct_rate")
ROC_COLUMNS = ("threshold", "fpr", "tpr")


def write_report(report: EvalReport, out_dir: str | Path, figures: bool = True) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    report_path = out_dir / "report.json"
    report_path.write_text(report_to_json(report), encoding="utf-8")
    written.append(report_path)

    aggregate_path = out_dir / "aggregate.csv"
    with aggregate_path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(AGGREGATE_COLUMNS)
        writer.writerow([getattr(report, col) for col in AGGREGATE_COLUMNS])
    written.append(aggregate_path)

    per_case_path = out_dir / "per_case.csv"
    with per_case_path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PER_CASE_COLUMNS)
        for t in report.per_case:
            writer.writerow([getattr(t, col) for col in PER_CASE_COLUMNS])
    written.append(per_case_path)

    if figures:
        written.append(_summary_figure(report, out_dir / "summary.png"))
    return written


def _summary_figure(report: EvalReport, path: Path) -> Path:
    labels = ["ASR", "Precision", "Recall", "F1", "Correct"]
    values = [report.asr, report.precision, report.recall, report.f1, report.correct_rate]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(labels, values, color="#4477aa")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("rate")
    title = f"attack={report.config.get('attack_kind', '?')} k={report.config.get('k', '?')}"
    ax.set_title(title)
    for i, v in enumerate(values):
        ax.text(i, v + 0.02, f"{v:.2f}", ha="center", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def write_sweep(rows: Sequence[dict[str, Any]], out_dir: str | Path, figures: bool = True) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    sweep_path = out_dir / "sweep.csv"
    with sweep_path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for row in rows:
            writer.writerow([row[col] for col in SWEEP_COLUMNS])
    written.append(sweep_path)

    if figures and rows:
        written.append(_sweep_figure(rows, "k", out_dir / "sweep_k.png"))
        written.append(_sweep_figure(rows, "n", out_dir / "sweep_n.png"))
    return written


def _sweep_figure(rows: Sequence[dict[str, Any]], axis: str, path: Path) -> Path:
    other = "n" if axis == "k" else "k"
    fig, ax = plt.subplots(figsize=(6, 4))
    for other_value in sorted({row[other] for row in rows}):
        series = sorted((r for r in rows if r[other] == other_value), key=lambda r: r[axis])
        xs = [r[axis] for r in series]
        for metric, style in (("asr", "-o"), ("precision", "--s"), ("recall", ":^"), ("f1", "-.d")):
            ax.plot(xs, [r[metric] for r in series], style, markersize=4,
                    label=f"{metric} ({other}={other_value})")
    ax.set_xlabel(axis)
    ax.set_ylabel("rate")
    ax.set_ylim(-0.05, 1.1)
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def write_roc(
    curve: RocCurve,
    clean_scores: Sequence[float],
    poison_scores: Sequence[float],
    out_dir: str | Path,
    figures: bool = True,
) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    thresholds = [math.inf] + sorted(set(clean_scores) | set(poison_scores), reverse=True)
    roc_path = out_dir / "roc.csv"
    with roc_path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ROC_COLUMNS)
        for threshold, (fpr, tpr) in zip(thresholds, curve.points):
            writer.writerow([threshold, fpr, tpr])
    written.append(roc_path)

    summary_path = out_dir / "roc.json"
    summary_path.write_text(json.dumps({"auc": curve.auc}) + "\n", encoding="utf-8")
    written.append(summary_path)

    if figures:
        fig, ax = plt.subplots(figsize=(5, 5))
        xs = [p[0] for p in curve.points]
        ys = [p[1] for p in curve.points]
        ax.plot(xs, ys, "-", color="#cc3311", label=f"AUC = {curve.auc:.3f}")
        ax.plot([0, 1], [0, 1], "--", color="gray", linewidth=0.8)
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("true positive rate")
        ax.legend()
        fig.tight_layout()
        fig_path = out_dir / "roc.png"
        fig.savefig(fig_path, dpi=120)
        plt.close(fig)
        written.append(fig_path)
    return written
