"""scikit-learn style wrapper around build + train + predict."""
from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import AugmentConfig, SegmentationDataset, SegmentationSample, split_dataset
from .eval.metrics import mean_foreground_dice
from .models import build_model, preset_config
from .models.networks import required_divisor
from .train import TrainConfig, train_loop
from .validation import check_geometry, check_images, check_labels


class SegmentationEstimator(BaseEstimator):
    """Train one zoo architecture on arrays.

    ``X`` is N×C×H×W (or N×H×W) float, ``y`` is N×H×W integer class ids.
    The preset supplies width/depth defaults; channels, classes and
    geometry are taken from the data.

    Examples
    --------
    >>> est = SegmentationEstimator("U2NetS", epochs=2)  # doctest: +SKIP
    >>> est.fit(X, y).predict(X).shape  # doctest: +SKIP
    (N, H, W)
    """

    def __init__(self, arch: str = "U2NetS", preset: str = "SynthShapes", tiny: bool = True, epochs: int = 20,
                 batch_size: int = 8, optimizer: str = "adam", lr: float | None = None, w_dice: float = 1.0,
                 w_ce: float = 1.0, val_fraction: float = 0.2, augment: bool = True, seed: int = 0,
                 num_classes: int | None = None):
        self.arch = arch
        self.preset = preset
        self.tiny = tiny
        self.epochs = epochs
        self.batch_size = batch_size
        self.optimizer = optimizer
        self.lr = lr
        self.w_dice = w_dice
        self.w_ce = w_ce
        self.val_fraction = val_fraction
        self.augment = augment
        self.seed = seed
        self.num_classes = num_classes

    def _train_config(self) -> TrainConfig:
        kw = dict(epochs=self.epochs, batch_size=self.batch_size, w_dice=self.w_dice, w_ce=self.w_ce,
                  seed=self.seed, augment=AugmentConfig() if self.augment else None)
        if self.lr is not None:
            kw["lr"] = self.lr
        return TrainConfig.sgd_profile(**kw) if self.optimizer == "sgd" else TrainConfig(**kw)

    def fit(self, X, y):
        X = check_images(X)
        y = check_labels(y, X, self.num_classes)
        k = self.num_classes or int(y[y != 65535].max()) + 1
        k = max(k, 2)
        cfg = preset_config(self.arch, self.preset, tiny=self.tiny, seed=self.seed)
        cfg = cfg.replace(in_channels=X.shape[1], num_classes=k, input_hw=tuple(X.shape[2:]))
        model = build_model(self.arch, cfg, device="meta")
        # instance norm needs more than one pixel at the bottleneck while training
        check_geometry(X, required_divisor(model), min_cells=2)
        model = build_model(self.arch, cfg)
        samples = [SegmentationSample(X[i], y[i], f"case_{i:05d}") for i in range(len(X))]
        ds = SegmentationDataset(samples, k, in_channels=X.shape[1])
        if len(ds) >= 2 and self.val_fraction > 0:
            train, val = split_dataset(ds, 1 - self.val_fraction, self.seed)
        else:
            train, val = ds, ds
        res = train_loop(model, train, val, self._train_config())
        model.load_state_dict(res.best_state)
        model.eval()
        self.model_ = model
        self.config_ = cfg
        self.history_ = res.history
        self.classes_ = np.arange(k)
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    @torch.no_grad()
    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = check_images(X)
        if X.shape[1:] != (self.config_.in_channels, *self.config_.input_hw):
            raise ValueError(f"expected images shaped N×{self.config_.in_channels}×"
                             f"{self.config_.input_hw[0]}×{self.config_.input_hw[1]}, got {X.shape}")
        out = []
        for i in range(0, len(X), self.batch_size):
            out.append(torch.softmax(self.model_(torch.from_numpy(X[i:i + self.batch_size])), 1).numpy())
        return np.concatenate(out)

    def predict(self, X) -> np.ndarray:
        return self.predict_proba(X).argmax(1)

    def score(self, X, y) -> float:
        """Mean per-case foreground dice."""
        pred = self.predict(X)
        y = check_labels(y, check_images(X), len(self.classes_))
        return float(np.mean([mean_foreground_dice(p, g, len(self.classes_)) for p, g in zip(pred, y)]))


__all__ = ["SegmentationEstimator"]
