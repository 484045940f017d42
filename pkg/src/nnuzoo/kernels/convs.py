from __future__ import annotations

import torch

from ..tensor_core import ShapeMismatchError, Tensor, conv2d


def depthwise_separable_conv(x: Tensor, dw_weight: Tensor, pw_weight: Tensor,
                             dw_bias: Tensor | None = None, pw_bias: Tensor | None = None) -> Tensor:
    """Per-channel k x k conv (same padding) followed by a 1 x 1 pointwise conv."""
    c = x.shape[1]
    k = dw_weight.shape[-1]
    if k % 2 == 0:
        raise ShapeMismatchError(f"depthwise_separable_conv: kernel size must be odd, got {k}")
    if dw_weight.shape[0] != c or pw_weight.shape[1] != c:
        raise ShapeMismatchError(
            f"depthwise_separable_conv: input has {c} channels, dw expects {dw_weight.shape[0]}, "
            f"pw expects {pw_weight.shape[1]}")
    y = conv2d(x, dw_weight, dw_bias, padding=k // 2, groups=c)
    return conv2d(y, pw_weight, pw_bias)


def gated_spatial_conv(x: Tensor, feat_w: Tensor, feat_b: Tensor | None,
                       gate_w: Tensor, gate_b: Tensor | None) -> Tensor:
    """3 x 3 feature branch times a sigmoid 1 x 1 gate, plus the input."""
    feat = conv2d(x, feat_w, feat_b, padding=feat_w.shape[-1] // 2)
    gate = torch.sigmoid(conv2d(x, gate_w, gate_b, padding=gate_w.shape[-1] // 2))
    return feat * gate + x
