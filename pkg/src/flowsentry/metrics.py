"""Confusion matrix, threshold metrics, ROC sweep and AUC. Positive class = scan (1)."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .nn import LengthMismatch


class SingleClassLabels(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(preds: Sequence[int], labels: Sequence[int]) -> ConfusionMatrix:
    p = np.asarray(preds).astype(int)
    y = np.asarray(labels).astype(int)
    if p.shape != y.shape:
        raise LengthMismatch(f"{len(p)} predictions vs {len(y)} labels")
    return ConfusionMatrix(tp=int(np.sum((p == 1) & (y == 1))), fp=int(np.sum((p == 1) & (y == 0))),
                           fn=int(np.sum((p == 0) & (y == 1))), tn=int(np.sum((p == 0) & (y == 0))))


@dataclass
class MetricReport:
    """None marks a metric whose denominator is zero."""
    accuracy: Optional[float]
    precision: Optional[float]
    recall: Optional[float]
    specificity: Optional[float]
    f_score: Optional[float]
    auc: Optional[float] = None

    @property
    def undefined(self) -> list[str]:
        return [k for k, v in asdict(self).items() if v is None and k != "auc"]


def _ratio(num: int, den: int) -> Optional[float]:
    return num / den if den else None


def metrics(cm: ConfusionMatrix) -> MetricReport:
    precision = _ratio(cm.tp, cm.tp + cm.fp)
    recall = _ratio(cm.tp, cm.tp + cm.fn)
    if precision is None or recall is None or precision + recall == 0:
        f = None
    else:
        f = 2 * precision * recall / (precision + recall)
    return MetricReport(accuracy=_ratio(cm.tp + cm.tn, cm.total), precision=precision,
                        recall=recall, specificity=_ratio(cm.tn, cm.tn + cm.fp), f_score=f)


@dataclass
class RocCurve:
    thresholds: list[float]
    fpr: list[float]
    tpr: list[float]


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> tuple[RocCurve, float]:
    """Sweep every distinct score as a ">= threshold" cut, highest first.

    Rows: (+inf, 0, 0), one per distinct score, then (-inf, 1, 1). Equal
    scores move together, so ties contribute a diagonal step. AUC is the
    trapezoid sum, accumulated in integers and divided once.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(int)
    if s.shape != y.shape:
        raise LengthMismatch(f"{len(s)} scores vs {len(y)} labels")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise SingleClassLabels("ROC needs both classes")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    thresholds, fpr, tpr = [math.inf], [0.0], [0.0]
    tp = fp = 0
    twice_area = 0
    i = 0
    while i < len(s):
        j = i
        while j < len(s) and s[j] == s[i]:
            j += 1
        dtp = int(np.sum(y[i:j]))
        dfp = (j - i) - dtp
        twice_area += dfp * (2 * tp + dtp)
        tp += dtp
        fp += dfp
        thresholds.append(float(s[i]))
        fpr.append(fp / n_neg)
        tpr.append(tp / n_pos)
        i = j
    thresholds.append(-math.inf)
    fpr.append(1.0)
    tpr.append(1.0)
    return RocCurve(thresholds, fpr, tpr), twice_area / (2 * n_pos * n_neg)


def report_dict(model: str, seed: int, threshold: float, cm: ConfusionMatrix,
                report: MetricReport, extra: Optional[dict] = None) -> dict:
    d = {"model": model, "model_kind": model, "seed": seed, "threshold": threshold,
         "confusion": asdict(cm), "metrics": asdict(report), "auc": report.auc}
    if extra:
        d["config"] = extra
    return d


def emit_report(report: dict, roc: RocCurve) -> tuple[str, str]:
    """JSON text of the report and CSV text of the ROC curve (threshold,fpr,tpr)."""
    js = json.dumps(report, indent=2, sort_keys=True) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["threshold", "fpr", "tpr"])
    for t, f, p in zip(roc.thresholds, roc.fpr, roc.tpr):
        w.writerow([repr(t), repr(f), repr(p)])
    return js, buf.getvalue()
