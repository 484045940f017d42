"""Multi-head self-attention, dense and shifted-window."""
from __future__ import annotations

from functools import lru_cache

import torch

from ..tensor_core import ShapeMismatchError, Tensor, softmax


def _check_heads(c: int, heads: int) -> None:
    if heads < 1 or c % heads:
        raise ShapeMismatchError(f"channels {c} not divisible by heads={heads}")


def _linear(x: Tensor, w: Tensor, b: Tensor | None) -> Tensor:
    y = x @ w.t()
    return y if b is None else y + b


def attention_core(x: Tensor, qkv_w: Tensor, qkv_b: Tensor | None, heads: int,
                   bias: Tensor | None = None) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention over the token axis of x (batch x L x C).

    ``bias`` is added to the logits and broadcasts against
    batch x heads x L x L; ``-inf`` entries mask pairs out.
    Returns the merged head outputs (before the output projection) and the
    attention weights.
    """
    bsz, length, c = x.shape
    _check_heads(c, heads)
    dh = c // heads
    qkv = _linear(x, qkv_w, qkv_b).reshape(bsz, length, 3, heads, dh).permute(2, 0, 3, 1, 4)
    q, k, v = qkv[0], qkv[1], qkv[2]
    logits = (q @ k.transpose(-2, -1)) * dh ** -0.5
    if bias is not None:
        logits = logits + bias
    attn = softmax(logits, -1)
    out = (attn @ v).transpose(1, 2).reshape(bsz, length, c)
    return out, attn


def mhsa(x: Tensor, qkv_w: Tensor, qkv_b: Tensor | None, proj_w: Tensor, proj_b: Tensor | None,
         heads: int, return_attn: bool = False):
    """Multi-head self-attention on batch x L x C tokens.

    ``qkv_w`` stacks the query, key and value projections (3C x C).
    """
    out, attn = attention_core(x, qkv_w, qkv_b, heads)
    out = _linear(out, proj_w, proj_b)
    return (out, attn) if return_attn else out


@lru_cache(maxsize=None)
def relative_position_index(window: int) -> Tensor:
    """window^2 x window^2 indices into a (2w-1)^2 bias table."""
    coords = torch.stack(torch.meshgrid(torch.arange(window), torch.arange(window), indexing="ij")).flatten(1)
    rel = (coords[:, :, None] - coords[:, None, :]).permute(1, 2, 0) + (window - 1)
    return rel[..., 0] * (2 * window - 1) + rel[..., 1]


def cyclic_shift(x: Tensor, shift: int) -> Tensor:
    """Roll a B x H x W x C map up-left by ``shift``; negative values undo it."""
    return torch.roll(x, shifts=(-shift, -shift), dims=(1, 2))


def window_partition(x: Tensor, window: int) -> Tensor:
    b, h, w, c = x.shape
    x = x.reshape(b, h // window, window, w // window, window, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(-1, window * window, c)


def window_reverse(windows: Tensor, window: int, h: int, w: int) -> Tensor:
    c = windows.shape[-1]
    b = windows.shape[0] // ((h // window) * (w // window))
    x = windows.reshape(b, h // window, w // window, window, window, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(b, h, w, c)


@lru_cache(maxsize=None)
def shift_mask(h: int, w: int, window: int, shift: int) -> Tensor:
    """nW x w^2 x w^2 additive mask: 0 within a region, -inf across regions."""
    region = torch.zeros(1, h, w, 1)
    cuts = (slice(0, -window), slice(-window, -shift), slice(-shift, None))
    label = 0
    for hs in cuts:
        for ws in cuts:
            region[:, hs, ws, :] = label
            label += 1
    ids = window_partition(region, window).squeeze(-1)
    same = ids[:, :, None] == ids[:, None, :]
    return torch.zeros(same.shape).masked_fill(~same, float("-inf"))


def window_attention(x: Tensor, qkv_w: Tensor, qkv_b: Tensor | None, proj_w: Tensor, proj_b: Tensor | None,
                     window: int, shift: int, heads: int, bias_table: Tensor | None) -> Tensor:
    """Windowed multi-head self-attention on a B x H x W x C map.

    The map is zero-padded bottom/right to a multiple of ``window``. With a
    nonzero ``shift`` (which must be window // 2) it is cyclically rolled
    first and tokens wrapped into a foreign region are masked out.
    ``bias_table`` is (2w-1)^2 x heads.
    """
    b, h, w, c = x.shape
    _check_heads(c, heads)
    if shift not in (0, window // 2):
        raise ValueError(f"shift must be 0 or {window // 2}, got {shift}")
    ph, pw = (-h) % window, (-w) % window
    if ph or pw:
        x = torch.nn.functional.pad(x, (0, 0, 0, pw, 0, ph))
    hp, wp = h + ph, w + pw
    if shift:
        x = cyclic_shift(x, shift)
    wins = window_partition(x, window)
    n = window * window
    bias = None
    if bias_table is not None:
        idx = relative_position_index(window).to(bias_table.device)
        bias = bias_table[idx.reshape(-1)].reshape(n, n, heads).permute(2, 0, 1).unsqueeze(0)
    if shift:
        mask = shift_mask(hp, wp, window, shift).to(x.dtype).unsqueeze(1)  # nW x 1 x n x n
        mask = mask.repeat(b, 1, 1, 1)
        bias = mask if bias is None else bias + mask
    out, _ = attention_core(wins, qkv_w, qkv_b, heads, bias)
    out = _linear(out, proj_w, proj_b)
    x = window_reverse(out, window, hp, wp)
    if shift:
        x = cyclic_shift(x, -shift)
    return x[:, :h, :w, :]
