"""Evaluation metrics for height regression and species classification.

Regression: MAE, RMSE, MSLE (log1p space), threshold accuracy (strict ratio
< threshold), and mean signed difference. Classification: per-class
TP/FP/FN counts, F1 and accuracy, macro-averaged over all classes with a 0/0
convention of zero. Everything is computed in f64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, EmptyInput, IndexOutOfRange, LengthMismatch


@dataclass(frozen=True)
class RegressionReport:
    mae: float
    rmse: float
    msle: float
    delta: float  # fraction of predictions within the ratio threshold
    msd: float
    n: int
    threshold: float = 1.25

    def as_dict(self) -> dict:
        return {
            "mae_m": self.mae,
            "rmse_m": self.rmse,
            "msle": self.msle,
            "delta": self.delta,
            "delta_threshold": self.threshold,
            "msd_m": self.msd,
            "n": self.n,
        }


@dataclass(frozen=True)
class ClassStats:
    tp: int
    fp: int
    fn: int
    n_true: int
    f1: float
    acc: float
    empty: bool  # no true samples for this class


@dataclass(frozen=True)
class ClassificationReport:
    macro_f1: float
    macro_acc: float
    per_class: tuple[ClassStats, ...]
    confusion: np.ndarray  # (C, C) counts, rows = true class
    n: int

    def as_dict(self) -> dict:
        return {
            "macro_f1": self.macro_f1,
            "macro_acc": self.macro_acc,
            "n": self.n,
            "per_class": [
                {
                    "tp": s.tp,
                    "fp": s.fp,
                    "fn": s.fn,
                    "n_true": s.n_true,
                    "f1": s.f1,
                    "acc": s.acc,
                    "empty": s.empty,
                }
                for s in self.per_class
            ],
            "confusion": self.confusion.tolist(),
        }


def regression_metrics(preds, truths, threshold: float = 1.25) -> RegressionReport:
    """All height metrics over paired predictions and ground truths.

    Inputs must be non-negative and equal-length; pairs with undefined truth
    must be filtered out by the caller. A zero on either side of a pair makes
    the ratio infinite, so it counts as a threshold failure (0 vs 0 counts as
    a success: ratio 1).
    """
    p = np.asarray(preds, dtype=np.float64).ravel()
    t = np.asarray(truths, dtype=np.float64).ravel()
    if p.size != t.size:
        raise LengthMismatch(f"{p.size} predictions vs {t.size} truths")
    if p.size == 0:
        raise EmptyInput("no prediction pairs")
    if np.any(p < 0) or np.any(t < 0):
        raise DomainError("negative heights")
    if threshold <= 1.0:
        raise DomainError("ratio threshold must exceed 1")

    diff = p - t
    mae = float(np.mean(np.abs(diff)))
    rmse = float(np.sqrt(np.mean(diff * diff)))
    logdiff = np.log1p(p) - np.log1p(t)
    msle = float(np.mean(logdiff * logdiff))
    msd = float(np.mean(diff))

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        ratio = np.maximum(p / t, t / p)
    ratio[(p == 0) & (t == 0)] = 1.0
    delta = float(np.count_nonzero(ratio < threshold) / p.size)
    return RegressionReport(mae, rmse, msle, delta, msd, int(p.size), threshold)


def classification_metrics(preds, truths, n_classes: int) -> ClassificationReport:
    """Macro-averaged F1 and accuracy over all ``n_classes`` classes.

    Classes absent from both truths and predictions contribute F1 = Acc = 0
    to the macro means and are flagged ``empty``.
    """
    p = np.asarray(preds, dtype=np.int64).ravel()
    t = np.asarray(truths, dtype=np.int64).ravel()
    if p.size != t.size:
        raise LengthMismatch(f"{p.size} predictions vs {t.size} truths")
    if p.size == 0:
        raise EmptyInput("no prediction pairs")
    if n_classes <= 0:
        raise IndexOutOfRange("n_classes must be positive")
    if np.any(p < 0) or np.any(p >= n_classes) or np.any(t < 0) or np.any(t >= n_classes):
        raise IndexOutOfRange(f"class index outside [0, {n_classes})")

    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (t, p), 1)

    stats = []
    for k in range(n_classes):
        tp = int(confusion[k, k])
        fp = int(confusion[:, k].sum() - tp)
        fn = int(confusion[k, :].sum() - tp)
        n_true = int(confusion[k, :].sum())
        f1 = 2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) > 0 else 0.0
        acc = tp / n_true if n_true > 0 else 0.0
        stats.append(ClassStats(tp, fp, fn, n_true, float(f1), float(acc), n_true == 0))

    macro_f1 = float(np.mean([s.f1 for s in stats]))
    macro_acc = float(np.mean([s.acc for s in stats]))
    return ClassificationReport(macro_f1, macro_acc, tuple(stats), confusion, int(p.size))


def checkpoint_score(macro_f1: float, delta: float) -> float:
    """Model-selection score: the mean of macro F1 and threshold accuracy."""
    if not (0.0 <= macro_f1 <= 1.0 and 0.0 <= delta <= 1.0):
        raise DomainError("checkpoint score inputs must lie in [0, 1]")
    return (macro_f1 + delta) / 2.0
