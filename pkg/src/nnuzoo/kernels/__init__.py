from .attention import cyclic_shift, mhsa, relative_position_index, window_attention
from .convs import depthwise_separable_conv, gated_spatial_conv
from .patches import depth_to_space, patch_expand, patch_merge, space_to_depth
from .scan import (ALTERNATION, SS2D_ORDERS, ScanParams, TraversalOrder, alternating_order,
                   linear_scan, selective_scan, ss2d)

__all__ = [
    "ALTERNATION", "SS2D_ORDERS", "ScanParams", "TraversalOrder", "alternating_order",
    "cyclic_shift", "depth_to_space", "depthwise_separable_conv", "gated_spatial_conv",
    "linear_scan", "mhsa", "patch_expand", "patch_merge", "relative_position_index",
    "selective_scan", "space_to_depth", "ss2d", "window_attention",
]
