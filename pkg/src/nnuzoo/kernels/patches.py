"""Space-to-depth patch merging and its inverse."""
from __future__ import annotations

import torch

from ..tensor_core import ShapeMismatchError, Tensor


def space_to_depth(x: Tensor, s: int) -> Tensor:
    """B x C x H x W -> B x C*s*s x H/s x W/s; channel index is c*s*s + i*s + j."""
    b, c, h, w = x.shape
    if h % s or w % s:
        raise ShapeMismatchError(f"space_to_depth: {h}x{w} not divisible by scale {s}")
    x = x.reshape(b, c, h // s, s, w // s, s)
    return x.permute(0, 1, 3, 5, 2, 4).reshape(b, c * s * s, h // s, w // s)


def depth_to_space(x: Tensor, s: int) -> Tensor:
    b, cs, h, w = x.shape
    if cs % (s * s):
        raise ShapeMismatchError(f"depth_to_space: {cs} channels not divisible by {s * s}")
    c = cs // (s * s)
    x = x.reshape(b, c, s, s, h, w)
    return x.permute(0, 1, 4, 2, 5, 3).reshape(b, c, h * s, w * s)


def _channel_norm(x: Tensor, weight: Tensor | None, bias: Tensor | None, eps: float = 1e-5) -> Tensor:
    mu = x.mean(1, keepdim=True)
    var = ((x - mu) ** 2).mean(1, keepdim=True)
    y = (x - mu) / torch.sqrt(var + eps)
    if weight is not None:
        y = y * weight[None, :, None, None]
    if bias is not None:
        y = y + bias[None, :, None, None]
    return y


def _project(x: Tensor, w: Tensor, b: Tensor | None) -> Tensor:
    y = torch.einsum("oc,bchw->bohw", w, x)
    return y if b is None else y + b[None, :, None, None]


def patch_merge(x: Tensor, scale: int, proj_w: Tensor, proj_b: Tensor | None = None, normalize: bool = False,
                norm_w: Tensor | None = None, norm_b: Tensor | None = None) -> Tensor:
    """Space-to-depth by ``scale``, optional channel layer norm, then a C' x C*s^2 projection."""
    y = space_to_depth(x, scale)
    if proj_w.shape[1] != y.shape[1]:
        raise ShapeMismatchError(f"patch_merge: projection expects {proj_w.shape[1]} channels, got {y.shape[1]}")
    if normalize:
        y = _channel_norm(y, norm_w, norm_b)
    return _project(y, proj_w, proj_b)


def patch_expand(x: Tensor, scale: int, proj_w: Tensor, proj_b: Tensor | None = None, normalize: bool = False,
                 norm_w: Tensor | None = None, norm_b: Tensor | None = None) -> Tensor:
    """C'*s^2 x C projection, depth-to-space by ``scale``, optional channel layer norm."""
    if proj_w.shape[1] != x.shape[1]:
        raise ShapeMismatchError(f"patch_expand: projection expects {proj_w.shape[1]} channels, got {x.shape[1]}")
    y = depth_to_space(_project(x, proj_w, proj_b), scale)
    if normalize:
        y = _channel_norm(y, norm_w, norm_b)
    return y
