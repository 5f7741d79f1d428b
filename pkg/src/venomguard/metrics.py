"""Evaluation: macro F1, the four venom-confusion percentages, and the
weighted composite score used to rank predictions."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data_model import ClassTable
from .inference import read_predictions_csv

PDENOM_MODES = ("status", "all", "errors")


@dataclass
class MetricWeights:
    """Term weights: F1, then the four confusion complements.

    The heaviest default (w4 = 5) sits on venomous-predicted-harmless,
    the medically dangerous direction.
    """

    w1: float = 1.0
    w2: float = 1.0
    w3: float = 2.0
    w4: float = 5.0
    w5: float = 2.0

    def __post_init__(self):
        vals = self.as_tuple()
        if any(w < 0 for w in vals):
            raise ValueError("weights must be non-negative")
        if sum(vals) <= 0:
            raise ValueError("at least one weight must be positive")

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.w1, self.w2, self.w3, self.w4, self.w5)


@dataclass
class MetricReport:
    macro_f1: float
    p1: float
    p2: float
    p3: float
    p4: float
    accuracy: float
    composite: float
    confusion: np.ndarray

    @property
    def n_observations(self) -> int:
        return int(self.confusion.sum())


def confusion_matrix(truth: np.ndarray, pred: np.ndarray, n_classes: int) -> np.ndarray:
    truth = np.asarray(truth, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if truth.shape != pred.shape or truth.ndim != 1 or truth.size < 1:
        raise ValueError("truth and predictions must be equal-length, non-empty")
    for name, ids in (("truth", truth), ("pred", pred)):
        if ids.min() < 0 or ids.max() >= n_classes:
            raise ValueError(f"{name} contains ids outside [0, {n_classes})")
    out = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(out, (truth, pred), 1)
    return out


def macro_f1(confusion: np.ndarray, all_classes: bool = False) -> float:
    """Mean per-class F1 as a percentage, skipping zero-support classes.

    all_classes=True averages over every class instead, counting
    zero-support classes as F1 = 0.
    """
    confusion = np.asarray(confusion)
    support = confusion.sum(axis=1)
    predicted = confusion.sum(axis=0)
    tp = np.diagonal(confusion).astype(np.float64)
    scores = []
    for c in range(confusion.shape[0]):
        if support[c] == 0 and not all_classes:
            continue
        prec = tp[c] / predicted[c] if predicted[c] > 0 else 0.0
        rec = tp[c] / support[c] if support[c] > 0 else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0
        scores.append(f1)
    if not scores:
        raise ValueError("no classes with ground-truth support")
    return 100.0 * float(np.mean(scores))


def venom_confusions(
    confusion: np.ndarray, classes: ClassTable, pdenom: str = "status"
) -> tuple[float, float, float, float]:
    """Percentages of the four cross/within-status error categories.

    Denominator choices: per the true venom status (default), all
    observations, or the total error count.
    """
    if pdenom not in PDENOM_MODES:
        raise ValueError(f"pdenom must be one of {PDENOM_MODES}")
    confusion = np.asarray(confusion)
    flags = classes.venomous_flags
    if confusion.shape[0] != flags.size:
        raise ValueError("confusion size does not match class table")
    venom = np.flatnonzero(flags)
    harmless = np.flatnonzero(~flags)
    off = confusion.copy()
    np.fill_diagonal(off, 0)
    hh = off[np.ix_(harmless, harmless)].sum()
    hv = off[np.ix_(harmless, venom)].sum()
    vh = off[np.ix_(venom, harmless)].sum()
    vv = off[np.ix_(venom, venom)].sum()

    n_h = confusion[harmless].sum()
    n_v = confusion[venom].sum()
    if pdenom == "status":
        denoms = (n_h, n_h, n_v, n_v)
    elif pdenom == "all":
        total = confusion.sum()
        denoms = (total, total, total, total)
    else:
        errors = off.sum()
        denoms = (errors, errors, errors, errors)

    out = []
    for count, denom in zip((hh, hv, vh, vv), denoms):
        if denom == 0:
            warnings.warn("zero denominator for a venom-confusion percentage")
            out.append(0.0)
        else:
            out.append(100.0 * count / denom)
    return tuple(out)


def track1_metric(
    f1: float,
    p: tuple[float, float, float, float],
    weights: MetricWeights | None = None,
) -> float:
    """Weighted mean of F1 and the four error-percentage complements."""
    weights = weights or MetricWeights()
    for v in (f1, *p):
        if not 0.0 <= v <= 100.0:
            raise ValueError("metric inputs must be percentages in [0, 100]")
    w = weights.as_tuple()
    numer = w[0] * f1 + sum(wi * (100.0 - pi) for wi, pi in zip(w[1:], p))
    return numer / sum(w)


def build_report(
    truth: np.ndarray,
    pred: np.ndarray,
    classes: ClassTable,
    weights: MetricWeights | None = None,
    pdenom: str = "status",
    all_classes: bool = False,
) -> MetricReport:
    confusion = confusion_matrix(truth, pred, len(classes.entries))
    f1 = macro_f1(confusion, all_classes=all_classes)
    p = venom_confusions(confusion, classes, pdenom=pdenom)
    accuracy = 100.0 * np.diagonal(confusion).sum() / confusion.sum()
    composite = track1_metric(f1, p, weights)
    return MetricReport(
        macro_f1=f1,
        p1=p[0],
        p2=p[1],
        p3=p[2],
        p4=p[3],
        accuracy=float(accuracy),
        composite=composite,
        confusion=confusion,
    )


def score_predictions(
    truth_path: str | Path,
    pred_path: str | Path,
    classes: ClassTable,
    weights: MetricWeights | None = None,
    pdenom: str = "status",
    all_classes: bool = False,
) -> MetricReport:
    """Join truth and prediction CSVs on observation id and score them."""
    truth_map = read_predictions_csv(truth_path)
    pred_map = read_predictions_csv(pred_path)
    missing = sorted(set(truth_map) - set(pred_map))
    extra = sorted(set(pred_map) - set(truth_map))
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"missing predictions for {missing[:10]}")
        if extra:
            parts.append(f"predictions for unknown observations {extra[:10]}")
        raise ValueError("; ".join(parts))
    ids = sorted(truth_map)
    truth = np.array([truth_map[i] for i in ids], dtype=np.int64)
    pred = np.array([pred_map[i] for i in ids], dtype=np.int64)
    return build_report(
        truth, pred, classes, weights=weights, pdenom=pdenom, all_classes=all_classes
    )


def report_text(report: MetricReport) -> str:
    lines = [
        f"observations     {report.n_observations}",
        f"macro_f1         {report.macro_f1:.4f}",
        f"p1 (h->h errors) {report.p1:.4f}",
        f"p2 (h->v)        {report.p2:.4f}",
        f"p3 (v->h)        {report.p3:.4f}",
        f"p4 (v->v errors) {report.p4:.4f}",
        f"accuracy         {report.accuracy:.4f}",
        f"composite        {report.composite:.4f}",
    ]
    return "\n".join(lines) + "\n"


def report_json(report: MetricReport) -> str:
    payload = {
        "macro_f1": report.macro_f1,
        "p1": report.p1,
        "p2": report.p2,
        "p3": report.p3,
        "p4": report.p4,
        "accuracy": report.accuracy,
        "composite": report.composite,
        "n_observations": report.n_observations,
    }
    return json.dumps(payload, indent=2) + "\n"
