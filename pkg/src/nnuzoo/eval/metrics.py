"""Overlap metrics on hard label maps."""
from __future__ import annotations

import numpy as np

from ..data import IGNORE_INDEX


def _np(x) -> np.ndarray:
    if hasattr(x, "detach"):
        x = x.detach().cpu().numpy()
    return np.asarray(x)


def dice_score(pred, gt, k: int, ignore_index: int = IGNORE_INDEX) -> float:
    """2|P∩G| / (|P|+|G|) for class ``k``; 1.0 when the class is absent from both."""
    pred, gt = _np(pred), _np(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"dice_score: shape mismatch {pred.shape} vs {gt.shape}")
    valid = gt != ignore_index
    p = (pred == k) & valid
    g = (gt == k) & valid
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / denom


def mean_foreground_dice(pred, gt, num_classes: int, include_background: bool = False,
                         ignore_index: int = IGNORE_INDEX) -> float:
    """Mean dice over the evaluated classes present in ``gt``.

    With no evaluated class in ``gt`` the score is 1.0 if the prediction is
    also empty for those classes and 0.0 otherwise.
    """
    pred, gt = _np(pred), _np(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"mean_foreground_dice: shape mismatch {pred.shape} vs {gt.shape}")
    valid = gt != ignore_index
    first = 0 if include_background else 1
    present = [k for k in range(first, num_classes) if ((gt == k) & valid).any()]
    if not present:
        predicted = any(((pred == k) & valid).any() for k in range(first, num_classes))
        return 0.0 if predicted else 1.0
    return float(np.mean([dice_score(pred, gt, k, ignore_index) for k in present]))


def per_case_dice(preds, gts, num_classes: int, include_background: bool = False) -> list[float]:
    """Mean foreground dice for each case of a batch (B×H×W)."""
    preds, gts = _np(preds), _np(gts)
    return [mean_foreground_dice(p, g, num_classes, include_background) for p, g in zip(preds, gts)]


__all__ = ["dice_score", "mean_foreground_dice", "per_case_dice"]
