"""
Subject-wise classification metrics.
"""
import logging
from typing import Optional, Sequence

import numpy as np
from sklearn.metrics import cohen_kappa_score, confusion_matrix, f1_score

logger = logging.getLogger(__name__)


def _check_pair(y_true: Sequence[int], y_pred: Sequence[int], what: str):
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"{what}: {len(y_true)} true labels but {len(y_pred)} predictions")
    if y_true.size == 0:
        raise ValueError(f"{what}: empty input")
    return y_true, y_pred


def macro_f1(y_true: Sequence[int], y_pred: Sequence[int], n_classes: Optional[int] = None) -> float:
    """
    Unweighted mean of per-class F1 over classes present in y_true or y_pred.

    A class with P + R == 0 contributes 0. n_classes only bounds the label range.
    """
    y_true, y_pred = _check_pair(y_true, y_pred, "macro_f1")
    if n_classes is not None and max(y_true.max(), y_pred.max()) >= n_classes:
        raise ValueError(f"macro_f1: label outside [0, {n_classes})")
    present = np.union1d(y_true, y_pred)
    return float(f1_score(y_true, y_pred, labels=present, average="macro", zero_division=0))


def cohen_kappa(y_true: Sequence[int], y_pred: Sequence[int]) -> float:
    """(p_o - p_e) / (1 - p_e); 0 when chance agreement is total"""
    y_true, y_pred = _check_pair(y_true, y_pred, "cohen_kappa")
    # p_e == 1 only when both sides use one and the same label
    if np.unique(np.concatenate([y_true, y_pred])).size == 1:
        return 0.0
    return float(cohen_kappa_score(y_true, y_pred))


def confusion(y_true: Sequence[int], y_pred: Sequence[int], n_classes: int) -> np.ndarray:
    y_true, y_pred = _check_pair(y_true, y_pred, "confusion")
    return confusion_matrix(y_true, y_pred, labels=np.arange(n_classes))
