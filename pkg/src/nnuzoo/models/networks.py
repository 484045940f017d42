"""Network topologies: the 11-stage nested U and the single-level baselines."""
from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from ..blocks import (BlockKind, ConvNormAct, GatedSpatialConv, Mamba1DLayer, PatchMerge, UBlockSpec, VSSLayer,
                      build_ublock)
from ..blocks.ublock import _upsample_like
from ..kernels.scan import TraversalOrder

STAGE_NAMES = ("En1", "En2", "En3", "En4", "En5", "En6", "De5", "De4", "De3", "De2", "De1")
DEFAULT_DEPTHS = (5, 4, 3, 2, 2, 2, 2, 2, 3, 4, 5)
# stages that run at the deepest resolutions and use the dilated CNN block in the hybrid variants
DEEP_STAGES = ("En5", "En6", "De5")


class SegmentationNet(nn.Module):
    """Base class: forward gives fused logits, forward_with_sides adds side outputs."""

    def forward_with_sides(self, x):
        return self.forward(x), []

    def heads(self) -> list[nn.Module]:
        return []

    def zero_init_heads(self) -> None:
        with torch.no_grad():
            for head in self.heads():
                for p in head.parameters():
                    p.zero_()


def scaled(c: int, width: float) -> int:
    return max(1, int(round(c * width)))


def nested_stage_specs(in_channels: int, plan: dict, width: float = 1.0) -> list[UBlockSpec]:
    """UBlockSpecs for the eleven stages En1..En6, De5..De1."""
    kind = BlockKind(plan["kind"])
    deep_kind = BlockKind(plan.get("deep_kind", "RSU_F"))
    depths = plan.get("depths", DEFAULT_DEPTHS)
    enc = [(scaled(m, width), scaled(o, width)) for m, o in plan["enc"]]
    dec = [(scaled(m, width), scaled(o, width)) for m, o in plan["dec"]]
    attrs = dict(plan.get("attrs", {}))
    for key in ("embed_dim",):
        if key in attrs:
            attrs[key] = scaled(attrs[key], width)
    specs = []
    prev = in_channels
    enc_out = []
    for i, (mid, out) in enumerate(enc):
        name = STAGE_NAMES[i]
        k = deep_kind if name in DEEP_STAGES else kind
        specs.append(_spec(k, prev, mid, out, depths[i], attrs, i))
        enc_out.append(out)
        prev = out
    for j, (mid, out) in enumerate(dec):
        i = 6 + j
        name = STAGE_NAMES[i]
        k = deep_kind if name in DEEP_STAGES else kind
        skip = enc_out[4 - j]
        specs.append(_spec(k, prev + skip, mid, out, depths[i], attrs, i))
        prev = out
    # traversal alternates over the scanning blocks themselves, skipping CNN stages
    for n, spec in enumerate(s for s in specs if not s.kind.is_cnn):
        spec.traversal_seed = n
    return specs


def _spec(kind: BlockKind, cin: int, mid: int, out: int, depth: int, attrs: dict, index: int) -> UBlockSpec:
    if kind is BlockKind.RSU_F or (not kind.is_cnn and index in (4, 5, 6)):
        schedule = (1,) * depth
    else:
        schedule = (2,) * depth
    return UBlockSpec(kind, cin, mid, out, depth, schedule, attrs if not kind.is_cnn else {})


class NestedUNet(SegmentationNet):
    """Six encoder and five decoder U-blocks with 2x pooling between them and fused side heads."""

    downsample = 32

    def __init__(self, in_channels: int, num_classes: int, plan: dict, width: float = 1.0):
        super().__init__()
        self.specs = nested_stage_specs(in_channels, plan, width)
        self.stages = nn.ModuleDict({n: build_ublock(s) for n, s in zip(STAGE_NAMES, self.specs)})
        side_ch = [self.specs[i].out_ch for i in (10, 9, 8, 7, 6, 5)]
        self.sides = nn.ModuleList([nn.Conv2d(c, num_classes, 3, padding=1) for c in side_ch])
        # per-class weighting of the six side maps keeps the head count affine in num_classes
        self.fuse = nn.Conv2d(6 * num_classes, num_classes, 1, groups=num_classes)

    def stage_kinds(self) -> list[BlockKind]:
        return [s.kind for s in self.specs]

    def heads(self):
        return [*self.sides, self.fuse]

    def forward_with_sides(self, x):
        st = self.stages
        enc = []
        h = x
        for i, name in enumerate(STAGE_NAMES[:6]):
            if i > 0:
                h = F.max_pool2d(h, 2, ceil_mode=True)
            h = st[name](h)
            enc.append(h)
        dec = [enc[5]]
        d = enc[5]
        for j, name in enumerate(STAGE_NAMES[6:]):
            skip = enc[4 - j]
            d = st[name](torch.cat([_upsample_like(d, skip), skip], 1))
            dec.append(d)
        # side heads from De1, De2, De3, De4, De5, En6
        feats = dec[::-1]
        sides = [_upsample_like(head(f), x) if f.shape[2:] != x.shape[2:] else head(f)
                 for head, f in zip(self.sides, feats)]
        return self.fuse(torch.stack(sides, 2).flatten(1, 2)), sides

    def forward(self, x):
        return self.forward_with_sides(x)[0]


class PlainUNet(SegmentationNet):
    """nnUNet-style 2D encoder-decoder: strided conv downsampling, transposed-conv upsampling."""

    def __init__(self, in_channels: int, num_classes: int, plan: dict, width: float = 1.0):
        super().__init__()
        feats = [scaled(f, width) for f in plan["features"]]
        n_conv = plan.get("convs_per_stage", 2)
        # per-stage (sh, sw) pooling; anisotropic strides keep non-square patches usable
        strides = [tuple(s) for s in plan.get("strides", [(2, 2)] * (len(feats) - 1))]
        if len(strides) != len(feats) - 1:
            raise ValueError("plain plan needs one stride per stage after the first")
        self.strides = strides
        self.downsample = (math.prod(s[0] for s in strides), math.prod(s[1] for s in strides))
        self.enc = nn.ModuleList()
        prev = in_channels
        for i, f in enumerate(feats):
            convs = [nn.Conv2d(prev, f, 3, stride=1 if i == 0 else strides[i - 1], padding=1),
                     nn.InstanceNorm2d(f, affine=True), nn.LeakyReLU(0.01)]
            for _ in range(n_conv - 1):
                convs += [nn.Conv2d(f, f, 3, padding=1), nn.InstanceNorm2d(f, affine=True), nn.LeakyReLU(0.01)]
            self.enc.append(nn.Sequential(*convs))
            prev = f
        self.ups = nn.ModuleList()
        self.dec = nn.ModuleList()
        for i in reversed(range(len(feats) - 1)):
            self.ups.append(nn.ConvTranspose2d(feats[i + 1], feats[i], strides[i], strides[i]))
            self.dec.append(nn.Sequential(ConvNormAct(2 * feats[i], feats[i]),
                                          *[ConvNormAct(feats[i], feats[i]) for _ in range(n_conv - 1)]))
        self.head = nn.Conv2d(feats[0], num_classes, 1)
        # deep supervision heads exist but are unused by the default loss
        self.ds_heads = nn.ModuleList([nn.Conv2d(feats[i], num_classes, 1) for i in range(1, len(feats) - 1)]) \
            if plan.get("deep_supervision", False) else None

    def heads(self):
        return [self.head]

    def forward_with_sides(self, x):
        skips = []
        h = x
        for stage in self.enc:
            h = stage(h)
            skips.append(h)
        sides = []
        for up, dec, skip in zip(self.ups, self.dec, reversed(skips[:-1])):
            h = dec(torch.cat([up(h), skip], 1))
            sides.append(h)
        out = self.head(h)
        if self.ds_heads is None:
            return out, []
        side_out = [_upsample_like(head(f), x) for head, f in zip(reversed(self.ds_heads), sides[:-1])]
        return out, side_out

    def forward(self, x):
        return self.forward_with_sides(x)[0]


class SingleBlockNet(SegmentationNet):
    """A whole network that is one U-block (UNETR and Swin-UNet baselines)."""

    def __init__(self, in_channels: int, num_classes: int, plan: dict, width: float = 1.0):
        super().__init__()
        attrs = dict(plan.get("attrs", {}))
        if "embed_dim" in attrs:
            attrs["embed_dim"] = scaled(attrs["embed_dim"], width)
        attrs["residual"] = False
        spec = UBlockSpec(plan["kind"], in_channels, scaled(plan["mid"], width), num_classes, len(plan["schedule"]),
                          tuple(plan["schedule"]), attrs)
        self.spec = spec
        self.downsample = spec.downsample
        self.net = build_ublock(spec)

    def heads(self):
        net = self.net
        return [net.out] if hasattr(net, "out") else [net.head]

    def forward(self, x):
        return self.net(x)


class HybridUNet(SegmentationNet):
    """State-space encoder over patch tokens with a convolutional U decoder.

    ``mixer`` selects the encoder layer: "vss" (SS2D), "gsc_vss" (gated spatial
    conv then SS2D) or "mamba1d" (single-direction scan).
    """

    def __init__(self, in_channels: int, num_classes: int, plan: dict, width: float = 1.0):
        super().__init__()
        dims = [scaled(d, width) for d in plan["dims"]]
        depths = plan["depths"]
        stem = plan.get("stem", 4)
        n_state, expand = plan.get("d_state", 16), plan.get("expand", 2)
        mixer = plan["mixer"]
        c_full = scaled(plan.get("stem_channels", 32), width)
        self.downsample = stem * 2 ** (len(dims) - 1)
        self.stem_skip = nn.Sequential(ConvNormAct(in_channels, c_full), ConvNormAct(c_full, c_full))
        self.stem = PatchMerge(in_channels, dims[0], stem, pre_norm=False, post_norm=True)
        self.levels = nn.ModuleList()
        self.downs = nn.ModuleList()
        for i, (d, n) in enumerate(zip(dims, depths)):
            layers: list[nn.Module] = []
            if mixer == "gsc_vss":
                layers.append(GatedSpatialConv(d))
            for _ in range(n):
                if mixer == "mamba1d":
                    layers.append(Mamba1DLayer(d, TraversalOrder.ROW_FORWARD, n_state, expand))
                else:
                    layers.append(VSSLayer(d, n_state, expand))
            self.levels.append(nn.Sequential(*layers))
            if i + 1 < len(dims):
                self.downs.append(PatchMerge(d, dims[i + 1], 2))
        self.ups = nn.ModuleList()
        self.dec = nn.ModuleList()
        for i in reversed(range(len(dims) - 1)):
            self.ups.append(nn.ConvTranspose2d(dims[i + 1], dims[i], 2, 2))
            self.dec.append(nn.Sequential(ConvNormAct(2 * dims[i], dims[i]), ConvNormAct(dims[i], dims[i])))
        self.up_full = nn.ConvTranspose2d(dims[0], c_full, stem, stem)
        self.dec_full = nn.Sequential(ConvNormAct(2 * c_full, c_full), ConvNormAct(c_full, c_full))
        self.head = nn.Conv2d(c_full, num_classes, 1)

    def heads(self):
        return [self.head]

    def forward(self, x):
        full = self.stem_skip(x)
        h = self.stem(x)
        skips = []
        for i, level in enumerate(self.levels):
            if i > 0:
                h = self.downs[i - 1](h)
            h = level(h)
            skips.append(h)
        for up, dec, skip in zip(self.ups, self.dec, reversed(skips[:-1])):
            h = dec(torch.cat([up(h), skip], 1))
        h = self.dec_full(torch.cat([self.up_full(h), full], 1))
        return self.head(h)


NETWORKS = {
    "nested": NestedUNet,
    "plain": PlainUNet,
    "single": SingleBlockNet,
    "hybrid": HybridUNet,
}


def required_divisor(net: nn.Module) -> tuple[int, int]:
    """(height, width) factors the input must be divisible by."""
    d = getattr(net, "downsample", 1)
    return (int(d[0]), int(d[1])) if isinstance(d, (tuple, list)) else (int(d), int(d))


def leaf_parameter_count(module: nn.Module) -> int:
    """Independent count: walk the module tree and add each module's own parameters."""
    total = sum(p.numel() for p in module._parameters.values() if p is not None)
    return total + sum(leaf_parameter_count(m) for m in module._modules.values() if m is not None)


__all__ = ["NestedUNet", "PlainUNet", "SingleBlockNet", "HybridUNet", "NETWORKS", "STAGE_NAMES",
           "leaf_parameter_count"]
