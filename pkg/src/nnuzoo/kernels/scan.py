"""Selective state-space scan and its four-direction 2D variant."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import torch

from ..tensor_core import ShapeMismatchError, Tensor


@dataclass
class ScanParams:
    """Per-direction scan parameters.

    ``A_log`` is d_inner x N (or batch x d_inner x N); the state matrix is
    ``-exp(A_log)``. ``delta`` is batch x L x d_inner and must already be
    positive. ``B`` and ``C`` are batch x L x N. ``D`` is d_inner.
    """

    A_log: Tensor
    D: Tensor | None
    delta: Tensor
    B: Tensor
    C: Tensor

    @property
    def A(self) -> Tensor:
        return -torch.exp(self.A_log)


class TraversalOrder(enum.Enum):
    ROW_FORWARD = ("row", False)
    ROW_BACKWARD = ("row", True)
    COL_FORWARD = ("col", False)
    COL_BACKWARD = ("col", True)

    @property
    def axis(self) -> str:
        return self.value[0]

    @property
    def reverse(self) -> bool:
        return self.value[1]

    def permutation(self, h: int, w: int) -> Tensor:
        """Sequence position -> row-major grid index."""
        return _permutation(self, h, w)

    def inverse(self, h: int, w: int) -> Tensor:
        return _inverse(self, h, w)

    def flatten(self, grid: Tensor) -> Tensor:
        """B x C x H x W -> B x L x C in this order."""
        b, c, h, w = grid.shape
        return grid.reshape(b, c, h * w).transpose(1, 2)[:, self.permutation(h, w)]

    def unflatten(self, seq: Tensor, h: int, w: int) -> Tensor:
        """Inverse of :meth:`flatten`."""
        b, _, c = seq.shape
        return seq[:, self.inverse(h, w)].transpose(1, 2).reshape(b, c, h, w)


# four-way cross scan used by SS2D
SS2D_ORDERS = (TraversalOrder.ROW_FORWARD, TraversalOrder.ROW_BACKWARD,
               TraversalOrder.COL_FORWARD, TraversalOrder.COL_BACKWARD)
# axis alternates every step, polarity every second step
ALTERNATION = (TraversalOrder.ROW_FORWARD, TraversalOrder.COL_FORWARD,
               TraversalOrder.ROW_BACKWARD, TraversalOrder.COL_BACKWARD)


def alternating_order(index: int) -> TraversalOrder:
    return ALTERNATION[index % len(ALTERNATION)]


@lru_cache(maxsize=None)
def _permutation(order: TraversalOrder, h: int, w: int) -> Tensor:
    grid = torch.arange(h * w).reshape(h, w)
    seq = grid.reshape(-1) if order.axis == "row" else grid.t().reshape(-1)
    return seq.flip(0) if order.reverse else seq


@lru_cache(maxsize=None)
def _inverse(order: TraversalOrder, h: int, w: int) -> Tensor:
    return torch.argsort(_permutation(order, h, w))


def linear_scan(a: Tensor, b: Tensor, method: str = "sequential", chunk: int = 64) -> Tensor:
    """h_t = a_t * h_{t-1} + b_t along dim 0 with h_{-1} = 0 (no autograd)."""
    if method == "sequential":
        h = torch.empty_like(b)
        h[0] = b[0]
        for t in range(1, b.shape[0]):
            torch.addcmul(b[t], a[t], h[t - 1], out=h[t])
        return h
    if method == "chunked":
        return _chunked_scan(a, b, chunk)
    raise ValueError(f"unknown scan method {method!r}")


def _hillis_steele(a: Tensor, b: Tensor, dim: int) -> tuple[Tensor, Tensor]:
    # inclusive scan of the affine maps (a, b) along ``dim``
    n = a.shape[dim]
    k = 1
    while k < n:
        a_hi, b_hi = a.narrow(dim, k, n - k), b.narrow(dim, k, n - k)
        a_lo, b_lo = a.narrow(dim, 0, n - k), b.narrow(dim, 0, n - k)
        b = torch.cat([b.narrow(dim, 0, k), torch.addcmul(b_hi, a_hi, b_lo)], dim)
        a = torch.cat([a.narrow(dim, 0, k), a_hi * a_lo], dim)
        k *= 2
    return a, b


def _chunked_scan(a: Tensor, b: Tensor, chunk: int) -> Tensor:
    n = a.shape[0]
    nc = -(-n // chunk)
    pad = nc * chunk - n
    if pad:
        a = torch.cat([a, a.new_ones((pad,) + a.shape[1:])])
        b = torch.cat([b, b.new_zeros((pad,) + b.shape[1:])])
    a = a.reshape((nc, chunk) + a.shape[1:])
    b = b.reshape((nc, chunk) + b.shape[1:])
    a_in, h_in = _hillis_steele(a, b, 1)
    # state entering each chunk: exclusive scan of the chunk totals
    _, carry = _hillis_steele(a_in[:, -1], h_in[:, -1], 0)
    carry = torch.cat([torch.zeros_like(carry[:1]), carry[:-1]])
    h = torch.addcmul(h_in, a_in, carry.unsqueeze(1))
    return h.reshape((nc * chunk,) + h.shape[2:])[:n]


def _discretize(x, delta, A, B):
    # time-major L x batch x d x N
    dA = torch.exp(delta.unsqueeze(-1) * A.unsqueeze(1)).transpose(0, 1).contiguous()
    dBx = ((delta * x).unsqueeze(-1) * B.unsqueeze(2)).transpose(0, 1).contiguous()
    return dA, dBx


class _SelectiveScan(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, delta, A, B, C, method):
        dA, dBx = _discretize(x, delta, A, B)
        h = linear_scan(dA, dBx, method)
        y = torch.einsum("lbdn,bln->bld", h, C)
        ctx.save_for_backward(x, delta, A, B, C)
        ctx.method = method
        return y

    @staticmethod
    def backward(ctx, gy):
        x, delta, A, B, C = ctx.saved_tensors
        dA, dBx = _discretize(x, delta, A, B)
        h = linear_scan(dA, dBx, ctx.method)
        del dBx
        gC = torch.einsum("lbdn,bld->bln", h, gy)
        gh = gy.transpose(0, 1).unsqueeze(-1) * C.transpose(0, 1).unsqueeze(2)
        # adjoint recurrence runs backwards in time with the decays shifted by one
        a_next = torch.cat([dA[1:], torch.zeros_like(dA[:1])])
        g = linear_scan(a_next.flip(0), gh.flip(0), ctx.method).flip(0)
        del gh, a_next
        h_prev = torch.cat([torch.zeros_like(h[:1]), h[:-1]])
        g_pre = g * h_prev * dA  # d loss / d (delta * A) per element
        del h, h_prev, dA
        gB = torch.einsum("lbdn,lbd->bln", g, (delta * x).transpose(0, 1))
        gbx = torch.einsum("lbdn,bln->bld", g, B)  # sum_n g * B
        gdelta = torch.einsum("lbdn,bdn->bld", g_pre, A) + gbx * x
        gx = gbx * delta
        gA = torch.einsum("lbdn,bld->bdn", g_pre, delta)
        return gx, gdelta, gA, gB, gC, None


def selective_scan(x: Tensor, params: ScanParams, method: str = "sequential") -> Tensor:
    """Run the discretized selective state-space recurrence.

    h_t = exp(delta_t * A) * h_{t-1} + delta_t * B_t * x_t,  y_t = <C_t, h_t> + D * x_t
    """
    if x.ndim != 3:
        raise ShapeMismatchError(f"selective_scan: x must be batch x L x d, got {tuple(x.shape)}")
    bsz, length, d = x.shape
    if length == 0:
        raise ValueError("selective_scan: empty sequence")
    delta, B, C = params.delta, params.B, params.C
    A = params.A
    if A.ndim == 2:
        A = A.unsqueeze(0).expand(bsz, -1, -1)
    n = A.shape[-1]
    if delta.shape != x.shape or A.shape != (bsz, d, n) or B.shape != (bsz, length, n) or C.shape != (bsz, length, n):
        raise ShapeMismatchError(
            f"selective_scan: inconsistent shapes x={tuple(x.shape)} delta={tuple(delta.shape)} "
            f"A={tuple(A.shape)} B={tuple(B.shape)} C={tuple(C.shape)}")
    if bool((delta <= 0).any()):
        raise ValueError("selective_scan: delta must be strictly positive")
    y = _SelectiveScan.apply(x, delta, A, B, C, method)
    if params.D is not None:
        y = y + x * params.D
    return y


def ss2d(x: Tensor, params: Sequence[ScanParams], out_proj: Tensor | None = None,
         orders: Sequence[TraversalOrder] = SS2D_ORDERS, method: str = "sequential") -> Tensor:
    """Four-direction selective scan over a B x d x H x W map.

    Per-token entries of each ``params[k]`` (delta, B, C) are given in
    row-major grid order (batch x H*W x .). The map and those entries are
    reordered along ``orders[k]``, scanned, put back on the grid and summed.
    ``out_proj`` (C_out x d) is applied to the merged map when given.
    """
    if len(params) != len(orders):
        raise ShapeMismatchError(f"ss2d: {len(orders)} directions need as many ScanParams, got {len(params)}")
    bsz, d, h, w = x.shape
    if h * w < 1:
        raise ValueError("ss2d: empty grid")
    k = len(orders)
    grid_seq = x.reshape(bsz, d, h * w).transpose(1, 2)
    perms = [o.permutation(h, w) for o in orders]
    xs = torch.cat([grid_seq[:, p] for p in perms])
    deltas = torch.cat([prm.delta[:, p] for prm, p in zip(params, perms)])
    Bs = torch.cat([prm.B[:, p] for prm, p in zip(params, perms)])
    Cs = torch.cat([prm.C[:, p] for prm, p in zip(params, perms)])
    if any(prm.A_log.ndim != 2 for prm in params):
        raise ShapeMismatchError("ss2d: each direction's A_log must be d x N")
    A_logs = torch.stack([prm.A_log for prm in params])
    A_log = A_logs.unsqueeze(1).expand(-1, bsz, -1, -1).reshape(k * bsz, d, -1)
    Ds = [prm.D for prm in params]
    D = None
    if any(v is not None for v in Ds):
        D = torch.stack([v if v is not None else torch.zeros(d, dtype=x.dtype) for v in Ds])
        D = D.unsqueeze(1).expand(-1, bsz, -1).reshape(k * bsz, 1, d)
    ys = selective_scan(xs, ScanParams(A_log, D, deltas, Bs, Cs), method=method)
    merged = 0
    for i, o in enumerate(orders):
        merged = merged + ys[i * bsz:(i + 1) * bsz][:, o.inverse(h, w)]
    out = merged.transpose(1, 2).reshape(bsz, d, h, w)
    if out_proj is not None:
        out = torch.einsum("od,bdhw->bohw", out_proj, out)
    return out
