from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint
from .networks import STAGE_NAMES, HybridUNet, NestedUNet, PlainUNet, SegmentationNet, SingleBlockNet
from .presets import DATASETS, PAPER_DATASETS, REFERENCE_PARAMS_M, reference_params
from .zoo import (ARCHITECTURES, X2NET_FAMILY, ArchitectureId, ModelConfig, UnknownArchitectureError,
                  UnknownPresetError, build_model, count_params, forward, leaf_parameter_count, preset_config)

__all__ = [
    "ARCHITECTURES", "DATASETS", "PAPER_DATASETS", "REFERENCE_PARAMS_M", "STAGE_NAMES", "X2NET_FAMILY",
    "ArchitectureId", "HybridUNet", "ModelConfig", "NestedUNet", "PlainUNet", "SegmentationNet",
    "SingleBlockNet", "UnknownArchitectureError", "UnknownPresetError", "build_model", "count_params",
    "forward", "leaf_parameter_count", "load_checkpoint", "preset_config", "read_checkpoint",
    "reference_params", "save_checkpoint", "write_checkpoint",
]
