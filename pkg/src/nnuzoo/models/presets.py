"""Dataset geometry presets and per-architecture width/depth plans.

The architecture plans are the calibrated defaults produced by
``tools/calibrate.py``; the reference parameter counts they are tuned
against live in ``REFERENCE_PARAMS_M``.
"""
from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class DatasetPreset:
    name: str
    patch: tuple[int, int]
    num_classes: int
    batch_size: int
    in_channels: int = 1
    modality: str = ""
    train_cases: int = 0
    test_cases: int = 0


DATASETS: dict[str, DatasetPreset] = {
    "Microscopy": DatasetPreset("Microscopy", (256, 256), 2, 8, 3, "microscopy", 1000, 101),
    "CAMUS": DatasetPreset("CAMUS", (256, 256), 3, 6, 1, "ultrasound", 900, 100),
    "ACDC": DatasetPreset("ACDC", (256, 224), 4, 16, 1, "MRI", 200, 100),
    "AbdomenMR": DatasetPreset("AbdomenMR", (320, 320), 14, 8, 1, "MRI", 60, 50),
    "AbdomenCT": DatasetPreset("AbdomenCT", (256, 256), 14, 6, 1, "CT", 50, 50),
    "PET": DatasetPreset("PET", (320, 192), 23, 4, 1, "PET", 50, 12),
    "SynthShapes": DatasetPreset("SynthShapes", (64, 64), 3, 8, 1, "synthetic", 0, 0),
}

PAPER_DATASETS = ("Microscopy", "CAMUS", "ACDC", "AbdomenMR", "AbdomenCT", "PET")

# Reported parameter counts in millions, per dataset column in PAPER_DATASETS order.
REFERENCE_PARAMS_M: dict[str, tuple[float, ...]] = {
    "nnUNet-like": (62.2, 62.2, 28.7, 45.4, 45.4, 45.5),
    "UNETR": (110.7, 110.3, 110.3, 110.4, 110.3, 110.3),
    "SwT": (39.5,) * 6,
    "SwinUMamba": (26.2,) * 6,
    "SegMamba": (25.3,) * 6,
    "LightUMamba": (5.70,) * 6,
    "U2Net": (42.0, 42.0, 42.0, 42.1, 42.1, 42.3),
    "U2NetS": (1.10, 1.10, 1.10, 1.10, 1.10, 1.20),
    "UNETR2Net": (149.1, 149.1, 149.0, 149.3, 149.1, 149.1),
    "SwT2Net": (172.2, 172.2, 172.2, 172.3, 172.3, 172.3),
    "SS2D2Net": (39.0, 39.1, 39.1, 39.2, 39.2, 39.3),
    "SS2D2NetS": (2.00, 2.00, 2.00, 2.10, 2.10, 2.20),
    "Alt1DM2Net": (8.90,) * 6,
    "Alt1DM2NetS": (1.50,) * 6,
    "MambaND2Net": (39.5,) * 6,
}


def reference_params(arch: str, dataset: str) -> float | None:
    """Reported count (millions) for the column, or None for desk-scale presets."""
    if dataset not in PAPER_DATASETS:
        return None
    return REFERENCE_PARAMS_M[arch][PAPER_DATASETS.index(dataset)]


U2_ENC = [[32, 64], [32, 128], [64, 256], [128, 512], [256, 512], [256, 512]]
U2_DEC = [[256, 512], [128, 256], [64, 128], [32, 64], [16, 64]]
U2S_ENC = [[16, 64]] * 6
U2S_DEC = [[16, 64]] * 5

U2_HALF_ENC = [[16, 32], [16, 64], [32, 128], [64, 256], [128, 256], [128, 256]]
U2_HALF_DEC = [[128, 256], [64, 128], [32, 64], [16, 32], [8, 32]]

# Values below were chosen by ``tools/calibrate.py --search`` against the AbdomenCT column.
ARCH_PLANS: dict[str, dict] = {
    "nnUNet-like": {"network": "plain", "features": [32, 64, 128, 256, 512, 512, 512], "convs_per_stage": 3},
    "UNETR": {"network": "single", "kind": "UNETR_B", "mid": 64, "schedule": [2, 2, 2, 2],
              "attrs": {"embed_dim": 768, "layers": 12, "heads": 12, "growth": 2, "dec_convs": 2}},
    "SwT": {"network": "single", "kind": "SWT_B", "mid": 96, "schedule": [4, 2, 2, 2],
            "attrs": {"growth": 2, "layers": [2, 2, 6, 2], "window": 8, "head_dim": 32}},
    "SwinUMamba": {"network": "hybrid", "mixer": "vss", "stem": 4, "dims": [88, 176, 352, 704],
                   "depths": [2, 2, 9, 2], "stem_channels": 48},
    "SegMamba": {"network": "hybrid", "mixer": "gsc_vss", "stem": 2, "dims": [88, 176, 352, 704],
                 "depths": [2, 2, 2, 2], "stem_channels": 32},
    "LightUMamba": {"network": "hybrid", "mixer": "mamba1d", "stem": 2, "dims": [52, 104, 208, 416],
                    "depths": [1, 2, 2, 2], "stem_channels": 32},
    "U2Net": {"network": "nested", "kind": "RSU", "deep_kind": "RSU_F", "enc": U2_ENC, "dec": U2_DEC},
    "U2NetS": {"network": "nested", "kind": "RSU", "deep_kind": "RSU_F", "enc": U2S_ENC, "dec": U2S_DEC},
    "UNETR2Net": {"network": "nested", "kind": "UNETR_B", "deep_kind": "UNETR_B", "enc": U2_ENC, "dec": U2_DEC,
                  "attrs": {"embed_dim": 192, "layers": 4, "heads": 3, "growth": 2}},
    "SwT2Net": {"network": "nested", "kind": "SWT_B", "deep_kind": "RSU_F", "enc": U2_ENC, "dec": U2_DEC,
                "attrs": {"layers": 9, "growth": 2, "window": 8, "head_dim": 32}},
    "SS2D2Net": {"network": "nested", "kind": "SS2D_B", "deep_kind": "RSU_F", "enc": U2_ENC, "dec": U2_DEC,
                 "attrs": {"layers": 2, "growth": 1, "d_state": 16, "expand": 2}},
    "SS2D2NetS": {"network": "nested", "kind": "SS2D_B", "deep_kind": "RSU_F", "enc": U2S_ENC, "dec": U2S_DEC,
                  "attrs": {"layers": 4, "growth": 1, "d_state": 16, "expand": 2}},
    "Alt1DM2Net": {"network": "nested", "kind": "ALT1DM_B", "deep_kind": "RSU_F", "enc": U2_HALF_ENC,
                   "dec": U2_HALF_DEC, "attrs": {"layers": 1, "growth": 1, "d_state": 16, "expand": 2}},
    "Alt1DM2NetS": {"network": "nested", "kind": "ALT1DM_B", "deep_kind": "RSU_F", "enc": U2S_ENC, "dec": U2S_DEC,
                    "attrs": {"layers": 5, "growth": 1, "d_state": 16, "expand": 2}},
    "MambaND2Net": {"network": "nested", "kind": "MAMBAND_B", "deep_kind": "MAMBAND_B", "enc": U2_ENC,
                    "dec": U2_DEC, "attrs": {"layers": 6, "growth": 1, "d_state": 16, "expand": 2}},
}

_P512 = [32, 64, 128, 256, 512, 512, 512]
_ISO = [[2, 2]] * 6
# nnUNet self-configures per dataset; the plain baseline keeps one fixed plan per preset
PLAIN_UNET_PLANS: dict[str, dict] = {
    "Microscopy": {"features": _P512, "strides": _ISO, "convs_per_stage": 4},
    "CAMUS": {"features": _P512, "strides": _ISO, "convs_per_stage": 4},
    "ACDC": {"features": [32, 64, 128, 256, 384, 384, 384], "strides": [[2, 2]] * 5 + [[2, 1]],
             "convs_per_stage": 3},
    "AbdomenMR": {"features": _P512, "strides": _ISO, "convs_per_stage": 3},
    "AbdomenCT": {"features": _P512, "strides": _ISO, "convs_per_stage": 3},
    "PET": {"features": _P512, "strides": [[2, 2]] * 5 + [[2, 1]], "convs_per_stage": 3},
    "SynthShapes": {"features": [32, 64, 128, 256, 512], "strides": [[2, 2]] * 4, "convs_per_stage": 2},
}

# Desk-scale overrides used for training acceptance and the timing comparison.
TINY_OVERRIDES: dict[str, dict] = {
    "U2NetS": {"width": 0.5},
    "SS2D2NetS": {"width": 0.5, "attrs": {"layers": 1, "d_state": 8}},
}
