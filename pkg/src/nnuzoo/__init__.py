"""Segmentation model zoo: nested U-networks with CNN, transformer and state-space blocks."""

__version__ = "0.1.0"

from .data import (IGNORE_INDEX, SegmentationDataset, SegmentationSample, SynthSpec, generate_synthetic,
                   load_dataset, preprocess, split_dataset)
from .estimator import SegmentationEstimator
from .models import (ARCHITECTURES, DATASETS, ArchitectureId, ModelConfig, build_model, count_params,
                     load_checkpoint, preset_config, save_checkpoint)
from .train import TrainConfig, cross_entropy, soft_dice_loss, train_loop

__all__ = [
    "ARCHITECTURES", "DATASETS", "IGNORE_INDEX", "ArchitectureId", "ModelConfig", "SegmentationDataset",
    "SegmentationEstimator", "SegmentationSample", "SynthSpec", "TrainConfig", "build_model", "count_params",
    "cross_entropy", "generate_synthetic", "load_checkpoint", "load_dataset", "preprocess", "preset_config",
    "save_checkpoint", "soft_dice_loss", "split_dataset", "train_loop",
]
