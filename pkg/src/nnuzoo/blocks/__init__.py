from .layers import (ConvNormAct, GatedSpatialConv, Mamba1DLayer, PatchExpand, PatchMerge, SwinLayer,
                     TransformerLayer, VSSLayer)
from .ublock import (RSU, AdaptedBlock, BlockKind, ResidualAdapter, TokenUBlock, UBlockSpec, UNETRBlock,
                     build_ublock)

__all__ = [
    "AdaptedBlock", "BlockKind", "ConvNormAct", "GatedSpatialConv", "Mamba1DLayer", "PatchExpand",
    "PatchMerge", "RSU", "ResidualAdapter", "SwinLayer", "TokenUBlock", "TransformerLayer", "UBlockSpec",
    "UNETRBlock", "VSSLayer", "build_ublock",
]
