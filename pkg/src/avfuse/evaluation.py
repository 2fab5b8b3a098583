"""Accuracy, per-class accuracy, and confusion-matrix reporting.

Rows of the confusion matrix are true classes, columns are predictions,
both in the canonical label order.  Per-class accuracy is the
row-normalized diagonal (recall); classes with no evaluated samples are
reported as absent rather than zero.  Argmax ties upstream break toward
the lowest class index.
"""

import os
from dataclasses import dataclass

import numpy as np

from . import fusion
from .data_io import LABELS, N_CLASSES
from .errors import ConfigError, ValidationError

MODES = ("audio_only", "visual_only", "audio_visual")


@dataclass
class EvalReport:
    overall_accuracy: float  # percent
    per_class_accuracy: dict  # label -> percent, absent classes omitted
    confusion: np.ndarray  # (10, 10) int64 counts
    mode: str
    n_samples: int


def evaluate(predictions, truths, mode: str = "audio_visual") -> EvalReport:
    """Score predicted class indices against true ones."""
    pred = np.asarray(predictions, dtype=np.int64)
    true = np.asarray(truths, dtype=np.int64)
    if pred.ndim != 1 or pred.shape != true.shape:
        raise ValidationError(
            f"predictions {pred.shape} and truths {true.shape} must be "
            f"equal-length 1-D sequences"
        )
    if pred.size == 0:
        raise ValidationError("cannot evaluate an empty sample set")
    for name, arr in (("prediction", pred), ("truth", true)):
        if arr.min() < 0 or arr.max() >= N_CLASSES:
            raise ValidationError(f"{name} index out of range [0, {N_CLASSES})")
    if mode not in MODES:
        raise ValidationError(f"unknown mode {mode!r} (expected one of {MODES})")

    counts = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(counts, (true, pred), 1)
    overall = 100.0 * counts.trace() / counts.sum()
    per_class = {}
    row_sums = counts.sum(axis=1)
    for c, label in enumerate(LABELS):
        if row_sums[c] > 0:
            per_class[label] = 100.0 * counts[c, c] / row_sums[c]
    return EvalReport(float(overall), per_class, counts, mode, int(pred.size))


def predict_classes(bundle: fusion.FusionBundle, sets) -> np.ndarray:
    """Argmax class indices (ties -> lowest index) for a batched set."""
    return fusion.predict_probs(bundle, sets).argmax(axis=1)


def modal_ablation(bundles: dict, sets, truths) -> dict:
    """Evaluate one bundle per mode over the same sample set.

    bundles maps mode name -> FusionBundle; all three modes must be
    present.  Returns mode -> EvalReport.
    """
    missing = [m for m in MODES if m not in bundles]
    if missing:
        raise ConfigError(f"missing trained heads for modes: {missing}")
    return {
        mode: evaluate(predict_classes(bundles[mode], sets), truths, mode)
        for mode in MODES
    }


def format_report(report: EvalReport) -> str:
    """Human-readable table matching the machine-readable CSV content."""
    lines = [
        f"mode: {report.mode}",
        f"samples: {report.n_samples}",
        f"overall accuracy: {report.overall_accuracy:.2f}%",
        "",
        f"{'category':<20}{'accuracy':>10}",
    ]
    for label in LABELS:
        if label in report.per_class_accuracy:
            lines.append(f"{label:<20}{report.per_class_accuracy[label]:>9.2f}%")
        else:
            lines.append(f"{label:<20}{'absent':>10}")
    return "\n".join(lines) + "\n"


def write_report(report_dir, report: EvalReport) -> dict:
    """Emit report.txt / metrics.csv / confusion.csv for one mode."""
    os.makedirs(report_dir, exist_ok=True)
    suffix = report.mode
    paths = {
        "text": os.path.join(report_dir, f"report_{suffix}.txt"),
        "metrics": os.path.join(report_dir, f"metrics_{suffix}.csv"),
        "confusion": os.path.join(report_dir, f"confusion_{suffix}.csv"),
    }
    with open(paths["text"], "w", encoding="utf-8") as fh:
        fh.write(format_report(report))
    with open(paths["metrics"], "w", encoding="utf-8") as fh:
        fh.write("category,accuracy_percent\n")
        fh.write(f"overall,{report.overall_accuracy:.6f}\n")
        for label in LABELS:
            if label in report.per_class_accuracy:
                fh.write(f"{label},{report.per_class_accuracy[label]:.6f}\n")
            else:
                fh.write(f"{label},\n")
    with open(paths["confusion"], "w", encoding="utf-8") as fh:
        fh.write("true\\pred," + ",".join(LABELS) + "\n")
        for c, label in enumerate(LABELS):
            fh.write(label + "," + ",".join(str(v) for v in report.confusion[c]) + "\n")
    return paths
