"""Input checks shared by the estimator and the command line."""
from __future__ import annotations

import numpy as np

from .data import IGNORE_INDEX


def check_images(X, ndim_hint: str = "N×C×H×W") -> np.ndarray:
    """Return ``X`` as float32 N×C×H×W; N×H×W input gains a channel axis."""
    if hasattr(X, "detach"):
        X = X.detach().cpu().numpy()
    X = np.asarray(X, dtype=np.float32)
    if X.ndim == 3:
        X = X[:, None]
    if X.ndim != 4:
        raise ValueError(f"expected images shaped {ndim_hint}, got {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("no images given")
    if not np.isfinite(X).all():
        raise ValueError("images contain non-finite values")
    return X


def check_labels(y, X: np.ndarray, num_classes: int | None = None) -> np.ndarray:
    """Return ``y`` as int64 N×H×W matching ``X``; ids must be in range (IGNORE_INDEX allowed)."""
    if hasattr(y, "detach"):
        y = y.detach().cpu().numpy()
    y = np.asarray(y)
    if not np.issubdtype(y.dtype, np.integer):
        if not np.array_equal(y, np.round(y)):
            raise ValueError("labels must be integer class ids")
    y = y.astype(np.int64)
    if y.shape != (X.shape[0], *X.shape[2:]):
        raise ValueError(f"labels {y.shape} do not match images {X.shape}")
    valid = y[y != IGNORE_INDEX]
    if valid.size and valid.min() < 0:
        raise ValueError("negative class id in labels")
    if num_classes is not None and valid.size and valid.max() >= num_classes:
        raise ValueError(f"class id {int(valid.max())} outside [0, {num_classes})")
    return y


def check_geometry(X: np.ndarray, divisor: tuple[int, int], min_cells: int = 1) -> None:
    """Sizes must divide evenly; the coarsest map must keep at least ``min_cells`` pixels."""
    h, w = X.shape[2:]
    if h % divisor[0] or w % divisor[1]:
        raise ValueError(f"image size {h}x{w} must be divisible by {divisor[0]}x{divisor[1]}")
    if (h // divisor[0]) * (w // divisor[1]) < min_cells:
        raise ValueError(f"image size {h}x{w} leaves a coarsest map smaller than {min_cells} pixels")


__all__ = ["check_geometry", "check_images", "check_labels"]
