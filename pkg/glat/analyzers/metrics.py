"""Slide-level metrics: macro one-vs-rest AUC and Cohen's kappa."""

from typing import Sequence, Tuple

import numpy as np
from loguru import logger
from sklearn.metrics import cohen_kappa_score, confusion_matrix, roc_auc_score

from glat.models import NUM_CLASSES, MetricsReport


def auc_metric(probs: np.ndarray, labels: Sequence[int]) -> float:
    """
    Macro average over the classes present of the one-vs-rest ranking AUC.

    Ties count one half (scikit-learn's trapezoidal ROC).

    Args:
        probs: N x C class probabilities
        labels: N true class indices

    Returns:
        AUC in [0, 1]

    Raises:
        ValueError: If fewer than two distinct labels are present
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    present = np.unique(labels)
    if present.size < 2:
        raise ValueError("AUC needs at least two distinct labels")
    per_class = [roc_auc_score(labels == c, probs[:, c]) for c in present]
    return float(np.mean(per_class))


def _kappa_is_degenerate(pred: np.ndarray, true: np.ndarray, n_classes: int) -> bool:
    """True when chance agreement p_e is 1 (both raters constant on one class)."""
    n = len(true)
    row = np.bincount(true, minlength=n_classes) / n
    col = np.bincount(pred, minlength=n_classes) / n
    return bool(abs(float(row @ col) - 1.0) < 1e-12)


def kappa_with_flag(
    pred: Sequence[int],
    true: Sequence[int],
    weighting: str = "none",
    n_classes: int = NUM_CLASSES,
) -> Tuple[float, bool]:
    """Cohen's kappa and whether the degenerate p_e = 1 case was hit."""
    pred = np.asarray(pred, dtype=np.int64)
    true = np.asarray(true, dtype=np.int64)
    if pred.shape != true.shape or pred.size == 0:
        raise ValueError("Predictions and labels must be non-empty and equally long")
    if weighting not in ("none", "quadratic"):
        raise ValueError(f"Unknown kappa weighting: {weighting}")

    if _kappa_is_degenerate(pred, true, n_classes):
        logger.warning("Chance agreement is 1; kappa defined as 0")
        return 0.0, True

    kappa = cohen_kappa_score(
        true,
        pred,
        labels=list(range(n_classes)),
        weights=None if weighting == "none" else "quadratic",
    )
    return float(kappa), False


def kappa_metric(
    pred: Sequence[int],
    true: Sequence[int],
    weighting: str = "none",
    n_classes: int = NUM_CLASSES,
) -> float:
    """
    Cohen's kappa (p_o - p_e) / (1 - p_e) from the C x C confusion matrix.

    Args:
        pred: Predicted class indices
        true: True class indices
        weighting: ``none`` or ``quadratic``
        n_classes: Number of classes

    Returns:
        Kappa in [-1, 1]; 0 when p_e = 1
    """
    return kappa_with_flag(pred, true, weighting, n_classes)[0]


def metrics_report(
    probs: np.ndarray, labels: Sequence[int], weighting: str = "none"
) -> MetricsReport:
    """AUC, kappa, accuracy, per-class counts and confusion matrix."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = probs.shape[1]
    pred = np.argmax(probs, axis=1)

    kappa, degenerate = kappa_with_flag(pred, labels, weighting, n_classes)
    return MetricsReport(
        auc=auc_metric(probs, labels),
        kappa=kappa,
        accuracy=float(np.mean(pred == labels)),
        per_class_counts=np.bincount(labels, minlength=n_classes).tolist(),
        confusion=confusion_matrix(labels, pred, labels=list(range(n_classes))).tolist(),
        kappa_degenerate=degenerate,
    )
