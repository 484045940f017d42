"""U-Blocks: small encoder-decoders used as single stages of a nested-U network."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any

import torch
import torch.nn.functional as F
from torch import nn

from .. import kernels as K
from ..kernels.scan import TraversalOrder, alternating_order
from ..tensor_core import ShapeMismatchError
from .layers import (ConvNormAct, GatedSpatialConv, Mamba1DLayer, PatchExpand, PatchMerge, SwinLayer,
                     TransformerLayer, VSSLayer, sincos_embedding)


class BlockKind(str, enum.Enum):
    RSU = "RSU"
    RSU_F = "RSU_F"
    UNETR_B = "UNETR_B"
    SWT_B = "SWT_B"
    SS2D_B = "SS2D_B"
    ALT1DM_B = "ALT1DM_B"
    MAMBAND_B = "MAMBAND_B"

    @property
    def is_cnn(self) -> bool:
        return self in (BlockKind.RSU, BlockKind.RSU_F)


@dataclass
class UBlockSpec:
    kind: BlockKind
    in_ch: int
    mid_ch: int
    out_ch: int
    depth: int
    scale_schedule: tuple[int, ...] | None = None
    attrs: dict[str, Any] = field(default_factory=dict)
    traversal_seed: int = 0

    def __post_init__(self):
        self.kind = BlockKind(self.kind)
        if self.scale_schedule is None:
            self.scale_schedule = (1 if self.kind is BlockKind.RSU_F else 2,) * self.depth
        self.scale_schedule = tuple(int(s) for s in self.scale_schedule)
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if len(self.scale_schedule) != self.depth:
            raise ValueError(f"scale_schedule has {len(self.scale_schedule)} entries for depth {self.depth}")
        if min(self.in_ch, self.mid_ch, self.out_ch) < 1 or min(self.scale_schedule) < 1:
            raise ValueError("channels and scale factors must be >= 1")

    @property
    def downsample(self) -> int:
        return math.prod(self.scale_schedule)


def _check_divisible(x: torch.Tensor, factor: int, what: str) -> None:
    h, w = x.shape[-2:]
    if h % factor or w % factor:
        raise ShapeMismatchError(f"{what}: resolution {h}x{w} not divisible by {factor}")


def _upsample_like(src, tar):
    return F.interpolate(src, size=tar.shape[2:], mode="bilinear", align_corners=False)


class RSU(nn.Module):
    """Residual U-block; the dilated variant keeps resolution and grows dilation instead."""

    def __init__(self, in_ch: int, mid_ch: int, out_ch: int, depth: int, scales=None, dilated: bool = False):
        super().__init__()
        self.depth, self.dilated = depth, dilated
        self.scales = tuple(scales) if scales is not None else (1 if dilated else 2,) * depth
        dil = [2 ** i if dilated else 1 for i in range(depth + 1)]
        self.conv_in = ConvNormAct(in_ch, out_ch)
        self.enc = nn.ModuleList([ConvNormAct(out_ch if i == 0 else mid_ch, mid_ch, dil[i]) for i in range(depth + 1)])
        self.bottom = ConvNormAct(mid_ch, mid_ch, 2 ** (depth + 1) if dilated else 2)
        self.dec = nn.ModuleList([ConvNormAct(2 * mid_ch, out_ch if i == 0 else mid_ch, dil[i])
                                  for i in range(depth + 1)])

    def forward(self, x):
        if not self.dilated:
            _check_divisible(x, math.prod(self.scales), "RSU")
        hx_in = self.conv_in(x)
        feats = []
        h = hx_in
        for i, conv in enumerate(self.enc):
            if i > 0 and not self.dilated:
                h = F.max_pool2d(h, self.scales[i - 1], ceil_mode=True)
            h = conv(h)
            feats.append(h)
        d = self.bottom(h)
        for i in reversed(range(self.depth + 1)):
            d = self.dec[i](torch.cat([d, feats[i]], 1))
            if i > 0 and not self.dilated:
                d = _upsample_like(d, feats[i - 1])
        return d + hx_in


class TokenUBlock(nn.Module):
    """U-block whose levels are stacks of Swin / SS2D / 1D-Mamba mixers.

    The input is patch-embedded by ``scales[0]``, merged by ``scales[i]``
    at each further level, then expanded back with concatenating skips.
    """

    def __init__(self, spec: UBlockSpec):
        super().__init__()
        a = spec.attrs
        self.kind = spec.kind
        self.scales = spec.scale_schedule
        depth = spec.depth
        growth = a.get("growth", 1)
        chans = [spec.mid_ch * growth ** i for i in range(depth)]
        layers = a.get("layers", 2)
        layers = [layers] * depth if isinstance(layers, int) else list(layers)
        if len(layers) < depth:
            layers = layers + [layers[-1]] * (depth - len(layers))
        self.channels = chans
        self.traversal_orders: list[TraversalOrder] = []
        self._layer_counter = 0
        self._seed = spec.traversal_seed

        self.embed = PatchMerge(spec.in_ch, chans[0], self.scales[0], pre_norm=False, post_norm=True)
        self.enc = nn.ModuleList([self._stack(chans[i], layers[i], a) for i in range(depth)])
        self.merges = nn.ModuleList([PatchMerge(chans[i - 1], chans[i], self.scales[i]) for i in range(1, depth)])
        self.expands = nn.ModuleList([PatchExpand(chans[i], chans[i - 1], self.scales[i]) for i in range(1, depth)])
        self.fuse = nn.ModuleList([nn.Conv2d(2 * chans[i], chans[i], 1) for i in range(depth - 1)])
        self.dec = nn.ModuleList([self._stack(chans[i], layers[i], a) for i in range(depth - 1)])
        self.head = PatchExpand(chans[0], spec.out_ch, self.scales[0], post_norm=False)

    def _stack(self, c: int, n: int, a: dict) -> nn.Sequential:
        mods: list[nn.Module] = []
        kind = self.kind
        n_state, expand = a.get("d_state", 16), a.get("expand", 2)
        if kind is BlockKind.ALT1DM_B:
            mods.append(GatedSpatialConv(c))
        for j in range(n):
            if kind is BlockKind.SWT_B:
                head_dim = a.get("head_dim", 32)
                mods.append(SwinLayer(c, max(1, c // head_dim) if c % head_dim == 0 else 1,
                                      a.get("window", 8), shifted=j % 2 == 1, mlp_ratio=a.get("mlp_ratio", 4.0)))
            elif kind is BlockKind.SS2D_B:
                mods.append(VSSLayer(c, n_state, expand))
            elif kind is BlockKind.ALT1DM_B:
                order = alternating_order(self._seed)
                self.traversal_orders.append(order)
                mods.append(Mamba1DLayer(c, order, n_state, expand))
            elif kind is BlockKind.MAMBAND_B:
                order = alternating_order(self._seed + self._layer_counter)
                self._layer_counter += 1
                self.traversal_orders.append(order)
                mods.append(Mamba1DLayer(c, order, n_state, expand))
            else:
                raise ValueError(f"TokenUBlock does not build {kind}")
        return nn.Sequential(*mods)

    def forward(self, x):
        _check_divisible(x, math.prod(self.scales), self.kind.value)
        h = self.embed(x)
        skips = []
        for i, stack in enumerate(self.enc):
            if i > 0:
                h = self.merges[i - 1](h)
            h = stack(h)
            skips.append(h)
        for i in reversed(range(len(self.dec))):
            h = self.expands[i](h)
            h = self.dec[i](self.fuse[i](torch.cat([h, skips[i]], 1)))
        return self.head(h)


class UNETRBlock(nn.Module):
    """Patch tokens through a transformer stack, decoded by transposed convs with tapped skips."""

    def __init__(self, spec: UBlockSpec):
        super().__init__()
        a = spec.attrs
        depth = spec.depth
        self.scales = spec.scale_schedule
        self.patch = math.prod(self.scales)
        e = a.get("embed_dim", 64)
        n_layers = a.get("layers", 2)
        growth = a.get("growth", 2)
        chans = [spec.mid_ch * growth ** i for i in range(depth)]
        self.embed_dim = e
        self.taps = [max(1, (j * n_layers) // depth) - 1 for j in range(depth)]
        self.embed = nn.Parameter(torch.empty(e, spec.in_ch * self.patch ** 2))
        self.embed_bias = nn.Parameter(torch.zeros(e))
        nn.init.kaiming_uniform_(self.embed, a=math.sqrt(5))
        self.layers = nn.ModuleList([TransformerLayer(e, a.get("heads", max(1, e // 64)), a.get("mlp_ratio", 4.0))
                                     for _ in range(n_layers)])
        self.norm = nn.LayerNorm(e)
        self.enc0 = ConvNormAct(spec.in_ch, chans[0])
        self.skips = nn.ModuleList([nn.Identity()] + [
            nn.Sequential(nn.ConvTranspose2d(e, chans[j], math.prod(self.scales[j:]), math.prod(self.scales[j:])),
                          ConvNormAct(chans[j], chans[j])) for j in range(1, depth)])
        self.ups = nn.ModuleList([
            nn.ConvTranspose2d(e if j == depth - 1 else chans[j + 1], chans[j], self.scales[j], self.scales[j])
            for j in range(depth)])
        n_dec = a.get("dec_convs", 1)
        self.decs = nn.ModuleList([
            nn.Sequential(*[ConvNormAct(2 * chans[j] if i == 0 else chans[j], chans[j]) for i in range(n_dec)])
            for j in range(depth)])
        self.out = nn.Conv2d(chans[0], spec.out_ch, 1)

    def forward(self, x):
        _check_divisible(x, self.patch, "UNETR_B")
        b = x.shape[0]
        grid = K.patch_merge(x, self.patch, self.embed, self.embed_bias)
        h, w = grid.shape[2:]
        t = grid.flatten(2).transpose(1, 2) + sincos_embedding(h, w, self.embed_dim, x.dtype)
        taps = []
        for layer in self.layers:
            t = layer(t)
            taps.append(t)

        def as_grid(tok):
            return tok.transpose(1, 2).reshape(b, self.embed_dim, h, w)

        d = as_grid(self.norm(t))
        for j in reversed(range(len(self.ups))):
            d = self.ups[j](d)
            skip = self.enc0(x) if j == 0 else self.skips[j](as_grid(taps[self.taps[j]]))
            d = self.decs[j](torch.cat([d, skip], 1))
        return self.out(d)


class ResidualAdapter(nn.Module):
    """y_block + pointwise(depthwise(x_in)), identity-initialized when channels match."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int = 3, bias: bool = False):
        super().__init__()
        self.dw = nn.Parameter(torch.zeros(in_ch, 1, kernel, kernel))
        self.pw = nn.Parameter(torch.empty(out_ch, in_ch, 1, 1))
        self.dw_bias = nn.Parameter(torch.zeros(in_ch)) if bias else None
        self.pw_bias = nn.Parameter(torch.zeros(out_ch)) if bias else None
        with torch.no_grad():
            self.dw[:, 0, kernel // 2, kernel // 2] = 1.0
            if in_ch == out_ch:
                self.pw.copy_(torch.eye(in_ch).reshape(in_ch, in_ch, 1, 1))
            else:
                nn.init.kaiming_uniform_(self.pw, a=math.sqrt(5))

    def forward(self, x_in, y_block):
        if x_in.shape[2:] != y_block.shape[2:]:
            raise ShapeMismatchError(
                f"residual_adapter: spatial dims {tuple(x_in.shape[2:])} vs {tuple(y_block.shape[2:])}")
        return y_block + K.depthwise_separable_conv(x_in, self.dw, self.pw, self.dw_bias, self.pw_bias)


class AdaptedBlock(nn.Module):
    def __init__(self, block: nn.Module, adapter: ResidualAdapter):
        super().__init__()
        self.block = block
        self.adapter = adapter

    @property
    def traversal_orders(self):
        return getattr(self.block, "traversal_orders", [])

    def forward(self, x):
        return self.adapter(x, self.block(x))


def build_ublock(spec: UBlockSpec) -> nn.Module:
    """Resolution-preserving U-block for ``spec``; non-CNN kinds get a residual adapter."""
    kind = spec.kind
    if kind is BlockKind.RSU:
        return RSU(spec.in_ch, spec.mid_ch, spec.out_ch, spec.depth, spec.scale_schedule)
    if kind is BlockKind.RSU_F:
        return RSU(spec.in_ch, spec.mid_ch, spec.out_ch, spec.depth, dilated=True)
    inner = UNETRBlock(spec) if kind is BlockKind.UNETR_B else TokenUBlock(spec)
    if not spec.attrs.get("residual", True):
        return inner
    return AdaptedBlock(inner, ResidualAdapter(spec.in_ch, spec.out_ch, spec.attrs.get("adapter_kernel", 3)))
