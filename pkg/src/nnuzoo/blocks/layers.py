"""Parameterized layers built on the kernels; all take and return B x C x H x W maps."""
from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .. import kernels as K
from ..kernels.scan import TraversalOrder


class ConvNormAct(nn.Module):
    """3x3 conv, instance norm, leaky ReLU(0.01)."""

    def __init__(self, cin: int, cout: int, dilation: int = 1, kernel: int = 3):
        super().__init__()
        pad = dilation * (kernel // 2)
        self.conv = nn.Conv2d(cin, cout, kernel, padding=pad, dilation=dilation)
        self.norm = nn.InstanceNorm2d(cout, affine=True)

    def forward(self, x):
        return F.leaky_relu(self.norm(self.conv(x)), 0.01)


class ChannelNorm(nn.Module):
    """Layer norm over the channel axis of a B x C x H x W map."""

    def __init__(self, c: int, eps: float = 1e-5):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(c))
        self.bias = nn.Parameter(torch.zeros(c))
        self.eps = eps

    def forward(self, x):
        return K.patches._channel_norm(x, self.weight, self.bias, self.eps)


class PatchMerge(nn.Module):
    def __init__(self, cin: int, cout: int, scale: int, pre_norm: bool = True, post_norm: bool = False):
        super().__init__()
        self.scale = scale
        cs = cin * scale * scale
        self.pre = ChannelNorm(cs) if pre_norm else None
        self.proj = nn.Parameter(torch.empty(cout, cs))
        self.bias = nn.Parameter(torch.zeros(cout)) if not pre_norm else None
        self.post = ChannelNorm(cout) if post_norm else None
        nn.init.kaiming_uniform_(self.proj, a=math.sqrt(5))

    def forward(self, x):
        if self.pre is not None:
            y = K.patch_merge(x, self.scale, self.proj, None, True, self.pre.weight, self.pre.bias)
        else:
            y = K.patch_merge(x, self.scale, self.proj, self.bias)
        return y if self.post is None else self.post(y)


class PatchExpand(nn.Module):
    def __init__(self, cin: int, cout: int, scale: int, post_norm: bool = True):
        super().__init__()
        self.scale = scale
        self.proj = nn.Parameter(torch.empty(cout * scale * scale, cin))
        self.norm = ChannelNorm(cout) if post_norm else None
        self.bias = None if post_norm else nn.Parameter(torch.zeros(cout * scale * scale))
        nn.init.kaiming_uniform_(self.proj, a=math.sqrt(5))

    def forward(self, x):
        if self.norm is None:
            return K.patch_expand(x, self.scale, self.proj, self.bias)
        return K.patch_expand(x, self.scale, self.proj, None, True, self.norm.weight, self.norm.bias)


class Mlp(nn.Module):
    def __init__(self, dim: int, ratio: float = 4.0):
        super().__init__()
        hidden = int(dim * ratio)
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, tokens):
        return K.mhsa(tokens, self.qkv.weight, self.qkv.bias, self.proj.weight, self.proj.bias, self.heads)


class TransformerLayer(nn.Module):
    """Pre-norm encoder layer on B x L x E tokens."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float = 4.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, mlp_ratio)

    def forward(self, t):
        t = t + self.attn(self.norm1(t))
        return t + self.mlp(self.norm2(t))


class SwinLayer(nn.Module):
    def __init__(self, dim: int, heads: int, window: int = 8, shifted: bool = False, mlp_ratio: float = 4.0):
        super().__init__()
        self.heads, self.window, self.shifted = heads, window, shifted
        self.norm1 = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.bias_table = nn.Parameter(torch.zeros((2 * window - 1) ** 2, heads))
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, mlp_ratio)

    def forward(self, x):
        t = x.permute(0, 2, 3, 1)
        h, w = t.shape[1:3]
        shift = self.window // 2 if self.shifted and min(h, w) > self.window else 0
        a = K.window_attention(self.norm1(t), self.qkv.weight, self.qkv.bias, self.proj.weight, self.proj.bias,
                               self.window, shift, self.heads, self.bias_table)
        t = t + a
        t = t + self.mlp(self.norm2(t))
        return t.permute(0, 3, 1, 2)


def _dt_bias(d_inner: int, dt_min: float = 1e-3, dt_max: float = 0.1) -> torch.Tensor:
    # inverse softplus of a log-uniform step in [dt_min, dt_max]
    dt = torch.exp(torch.rand(d_inner) * (math.log(dt_max) - math.log(dt_min)) + math.log(dt_min))
    return dt + torch.log(-torch.expm1(-dt))


class _ScanProjections(nn.Module):
    """Input-dependent delta/B/C projections and the A, D parameters for k directions."""

    def __init__(self, d_inner: int, d_state: int, directions: int):
        super().__init__()
        self.d_state = d_state
        self.dt_rank = math.ceil(d_inner / 16)
        r = self.dt_rank
        self.x_proj = nn.Parameter(torch.empty(directions, r + 2 * d_state, d_inner))
        self.dt_proj = nn.Parameter(torch.empty(directions, d_inner, r))
        self.dt_bias = nn.Parameter(torch.stack([_dt_bias(d_inner) for _ in range(directions)]))
        a = torch.arange(1, d_state + 1, dtype=torch.float32).log()
        self.A_log = nn.Parameter(a.repeat(directions, d_inner, 1))
        self.D = nn.Parameter(torch.ones(directions, d_inner))
        nn.init.uniform_(self.x_proj, -d_inner ** -0.5, d_inner ** -0.5)
        nn.init.uniform_(self.dt_proj, -r ** -0.5, r ** -0.5)

    def params(self, k: int, seq: torch.Tensor) -> K.ScanParams:
        """ScanParams for direction ``k`` from B x L x d_inner tokens."""
        r, n = self.dt_rank, self.d_state
        proj = seq @ self.x_proj[k].t()
        dt, b, c = proj.split([r, n, n], dim=-1)
        delta = F.softplus(dt @ self.dt_proj[k].t() + self.dt_bias[k])
        return K.ScanParams(self.A_log[k], self.D[k], delta, b, c)


class VSSLayer(nn.Module):
    """Norm, gated SS2D, projection and residual (VMamba-style visual state-space layer)."""

    def __init__(self, dim: int, d_state: int = 16, expand: int = 2, d_conv: int = 3):
        super().__init__()
        di = expand * dim
        self.norm = nn.LayerNorm(dim)
        self.in_proj = nn.Linear(dim, 2 * di, bias=False)
        self.dwconv = nn.Conv2d(di, di, d_conv, padding=d_conv // 2, groups=di)
        self.scan = _ScanProjections(di, d_state, 4)
        self.out_norm = nn.LayerNorm(di)
        self.out_proj = nn.Linear(di, dim, bias=False)

    def forward(self, x):
        b, c, h, w = x.shape
        t = self.norm(x.permute(0, 2, 3, 1))
        u, z = self.in_proj(t).chunk(2, dim=-1)
        u = F.silu(self.dwconv(u.permute(0, 3, 1, 2)))
        seq = u.reshape(b, u.shape[1], h * w).transpose(1, 2)
        params = [self.scan.params(k, seq) for k in range(4)]
        y = K.ss2d(u, params)
        y = self.out_norm(y.permute(0, 2, 3, 1)) * F.silu(z)
        return x + self.out_proj(y).permute(0, 3, 1, 2)


class Mamba1DLayer(nn.Module):
    """Mamba layer scanning the flattened map along one traversal order."""

    def __init__(self, dim: int, order: TraversalOrder, d_state: int = 16, expand: int = 2, d_conv: int = 3):
        super().__init__()
        di = expand * dim
        self.order = order
        self.d_conv = d_conv
        self.norm = nn.LayerNorm(dim)
        self.in_proj = nn.Linear(dim, 2 * di, bias=False)
        self.conv = nn.Conv2d(di, di, (d_conv, 1), groups=di)
        self.scan = _ScanProjections(di, d_state, 1)
        self.out_proj = nn.Linear(di, dim, bias=False)

    def forward(self, x):
        h, w = x.shape[2:]
        seq = self.order.flatten(x)
        u, z = self.in_proj(self.norm(seq)).chunk(2, dim=-1)
        # causal depthwise conv along the sequence
        u = F.pad(u.transpose(1, 2).unsqueeze(-1), (0, 0, self.d_conv - 1, 0))
        u = F.silu(self.conv(u).squeeze(-1).transpose(1, 2))
        y = K.selective_scan(u, self.scan.params(0, u)) * F.silu(z)
        return x + self.order.unflatten(self.out_proj(y), h, w)


class GatedSpatialConv(nn.Module):
    def __init__(self, c: int):
        super().__init__()
        self.feat = nn.Conv2d(c, c, 3, padding=1)
        self.gate = nn.Conv2d(c, c, 1)

    def forward(self, x):
        return K.gated_spatial_conv(x, self.feat.weight, self.feat.bias, self.gate.weight, self.gate.bias)


def sincos_embedding(h: int, w: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    """Fixed 2D sine-cosine position embedding, (h*w) x dim."""
    quarter = dim // 4
    omega = 1.0 / (10000 ** (torch.arange(quarter, dtype=torch.float64) / max(quarter, 1)))
    ys, xs = torch.meshgrid(torch.arange(h, dtype=torch.float64), torch.arange(w, dtype=torch.float64),
                            indexing="ij")
    parts = []
    for grid in (ys.reshape(-1), xs.reshape(-1)):
        ang = grid[:, None] * omega[None, :]
        parts += [torch.sin(ang), torch.cos(ang)]
    emb = torch.cat(parts, dim=1)
    if emb.shape[1] < dim:
        emb = F.pad(emb, (0, dim - emb.shape[1]))
    return emb.to(dtype)
