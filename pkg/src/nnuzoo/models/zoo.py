"""Named architectures, model configuration and parameter accounting."""
from __future__ import annotations

import copy
import enum
import json
from dataclasses import asdict, dataclass, field

import torch
from torch import nn

from ..tensor_core import ShapeMismatchError
from .networks import NETWORKS, SegmentationNet, leaf_parameter_count, required_divisor
from .presets import ARCH_PLANS, DATASETS, PLAIN_UNET_PLANS, TINY_OVERRIDES


class ArchitectureId(str, enum.Enum):
    NNUNET = "nnUNet-like"
    UNETR = "UNETR"
    SWT = "SwT"
    SWINUMAMBA = "SwinUMamba"
    SEGMAMBA = "SegMamba"
    LIGHTUMAMBA = "LightUMamba"
    U2NET = "U2Net"
    U2NETS = "U2NetS"
    UNETR2NET = "UNETR2Net"
    SWT2NET = "SwT2Net"
    SS2D2NET = "SS2D2Net"
    SS2D2NETS = "SS2D2NetS"
    ALT1DM2NET = "Alt1DM2Net"
    ALT1DM2NETS = "Alt1DM2NetS"
    MAMBAND2NET = "MambaND2Net"

    @classmethod
    def parse(cls, name: "str | ArchitectureId") -> "ArchitectureId":
        if isinstance(name, cls):
            return name
        key = str(name).replace("²", "2").lower()
        for a in cls:
            if a.value.lower() == key or a.name.lower() == key:
                return a
        if key == "nnunet":
            return cls.NNUNET
        raise UnknownArchitectureError(name)


ARCHITECTURES = tuple(a.value for a in ArchitectureId)
X2NET_FAMILY = ("UNETR2Net", "SwT2Net", "SS2D2Net", "SS2D2NetS", "Alt1DM2Net", "Alt1DM2NetS", "MambaND2Net")


class UnknownArchitectureError(KeyError):
    pass


class UnknownPresetError(KeyError):
    pass


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ModelConfig:
    arch: str
    in_channels: int
    num_classes: int
    input_hw: tuple[int, int]
    width: float = 1.0
    plan: dict = field(default_factory=dict)
    seed: int = 0
    preset: str = ""
    batch_size: int = 1

    def __post_init__(self):
        self.arch = ArchitectureId.parse(self.arch).value
        self.input_hw = tuple(int(v) for v in self.input_hw)
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if not self.plan:
            self.plan = copy.deepcopy(ARCH_PLANS[self.arch])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_hw"] = list(self.input_hw)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{**d, "input_hw": tuple(d["input_hw"])})

    def replace(self, **kw) -> "ModelConfig":
        d = self.to_dict()
        d.update(kw)
        return ModelConfig.from_dict(d)


def preset_config(arch: "str | ArchitectureId", dataset: str, tiny: bool = False, seed: int = 0,
                  **overrides) -> ModelConfig:
    """Model configuration for ``arch`` at a dataset preset's geometry."""
    arch = ArchitectureId.parse(arch).value
    if dataset not in DATASETS:
        raise UnknownPresetError(dataset)
    ds = DATASETS[dataset]
    plan = copy.deepcopy(ARCH_PLANS[arch])
    if arch == ArchitectureId.NNUNET.value and dataset in PLAIN_UNET_PLANS:
        plan = _merge(plan, PLAIN_UNET_PLANS[dataset])
    width = 1.0
    if tiny:
        tiny_over = dict(TINY_OVERRIDES.get(arch, {"width": 0.25}))
        width = tiny_over.pop("width", 1.0)
        plan = _merge(plan, tiny_over)
    if "plan" in overrides:
        plan = _merge(plan, overrides.pop("plan"))
    cfg = ModelConfig(arch, ds.in_channels, ds.num_classes, ds.patch, width, plan, seed, dataset, ds.batch_size)
    return cfg.replace(**overrides) if overrides else cfg


def build_model(arch: "str | ArchitectureId", config: ModelConfig, device: str | None = None) -> SegmentationNet:
    """Build an initialized network; ``device="meta"`` builds shapes only (for counting)."""
    arch = ArchitectureId.parse(arch).value
    if arch != config.arch:
        raise ValueError(f"config is for {config.arch}, asked to build {arch}")
    cls = NETWORKS[config.plan["network"]]
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed)
        if device is not None:
            with torch.device(device):
                net = cls(config.in_channels, config.num_classes, config.plan, config.width)
        else:
            net = cls(config.in_channels, config.num_classes, config.plan, config.width)
    dh, dw = required_divisor(net)
    h, w = config.input_hw
    if h % dh or w % dw:
        raise ShapeMismatchError(f"{arch}: input {h}x{w} must be divisible by {dh}x{dw}")
    net.config = config
    return net


def count_params(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def forward(model: SegmentationNet, batch: torch.Tensor) -> torch.Tensor:
    cfg: ModelConfig | None = getattr(model, "config", None)
    if cfg is not None:
        if batch.ndim != 4 or batch.shape[1] != cfg.in_channels or tuple(batch.shape[2:]) != cfg.input_hw:
            raise ShapeMismatchError(
                f"forward: expected B x {cfg.in_channels} x {cfg.input_hw[0]} x {cfg.input_hw[1]}, "
                f"got {tuple(batch.shape)}")
    return model(batch)


__all__ = ["ARCHITECTURES", "ArchitectureId", "ModelConfig", "UnknownArchitectureError", "UnknownPresetError",
           "X2NET_FAMILY", "build_model", "count_params", "forward", "leaf_parameter_count", "preset_config"]
