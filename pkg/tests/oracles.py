"""Independent reference implementations used by the tests.

Everything here is written with plain Python loops or numpy so it shares no
code path with the package under test.
"""
from __future__ import annotations

import itertools
import math

import numpy as np
import torch


# ----------------------------------------------------------------------------- finite differences

def fd_grad(f, x: torch.Tensor, h: float = 1e-5) -> torch.Tensor:
    """Central-difference gradient of scalar ``f`` at ``x`` (every element)."""
    x = x.detach().clone()
    g = torch.zeros_like(x)
    flat, gflat = x.view(-1), g.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            old = flat[i].item()
            flat[i] = old + h
            fp = float(f(x))
            flat[i] = old - h
            fm = float(f(x))
            flat[i] = old
            gflat[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b) -> float:
    a = torch.as_tensor(a, dtype=torch.float64)
    b = torch.as_tensor(b, dtype=torch.float64)
    return float((a - b).norm() / max(float(b.norm()), 1e-12))


def check_grads(fn, inputs: list[torch.Tensor], h: float = 1e-5, seed: int = 0) -> float:
    """Worst relative error between autograd and central differences of sum(fn(*inputs) * R)."""
    inputs = [t.detach().clone().double().requires_grad_(True) for t in inputs]
    out = fn(*inputs)
    r = torch.randn(out.shape, generator=torch.Generator().manual_seed(seed), dtype=out.dtype)
    grads = torch.autograd.grad((out * r).sum(), inputs, allow_unused=True)
    worst = 0.0
    for i, (t, g) in enumerate(zip(inputs, grads)):
        def f(v, i=i):
            args = [v if j == i else u.detach() for j, u in enumerate(inputs)]
            return (fn(*args) * r).sum()
        fd = fd_grad(f, t, h)
        worst = max(worst, rel_err(torch.zeros_like(t) if g is None else g, fd))
    return worst


def directional_check(module: torch.nn.Module, x: torch.Tensor, h: float = 1e-5, seed: int = 0) -> float:
    """Relative error of <grad, v> against a central difference along a random direction v
    in (input, parameter) space; cheap enough for whole blocks."""
    g = torch.Generator().manual_seed(seed)
    module = module.double()
    params = [p for p in module.parameters() if p.requires_grad]
    x = x.double().detach().requires_grad_(True)
    out = module(x)
    r = torch.randn(out.shape, generator=g, dtype=torch.float64)
    grads = torch.autograd.grad((out * r).sum(), [x, *params], allow_unused=True)
    dirs = [torch.randn(t.shape, generator=g, dtype=torch.float64) for t in [x, *params]]
    analytic = sum(float((gr * d).sum()) for gr, d in zip(grads, dirs) if gr is not None)
    with torch.no_grad():
        base = [p.detach().clone() for p in params]

        def at(eps):
            for p, b0, d in zip(params, base, dirs[1:]):
                p.copy_(b0 + eps * d)
            return float((module(x + eps * dirs[0]) * r).sum())

        fd = (at(h) - at(-h)) / (2 * h)
        at(0.0)
    return abs(analytic - fd) / max(abs(fd), 1e-12)


# ----------------------------------------------------------------------------- elementwise formulas

def gelu_loop(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    for idx in np.ndindex(x.shape):
        v = x[idx]
        out[idx] = 0.5 * v * (1 + math.erf(v / math.sqrt(2)))
    return out


def silu_loop(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    for idx in np.ndindex(x.shape):
        v = x[idx]
        out[idx] = v / (1 + math.exp(-v))
    return out


def layer_norm_rows_loop(x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Normalize each row of a 2-D array over its last axis."""
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        row = [float(v) for v in x[i]]
        mu = sum(row) / len(row)
        var = sum((v - mu) ** 2 for v in row) / len(row)
        for j, v in enumerate(row):
            out[i, j] = (v - mu) / math.sqrt(var + eps)
    return out


# ----------------------------------------------------------------------------- convolutions

def conv2d_loop(x, w, b=None, stride=1, padding=0, dilation=1, groups=1):
    x, w = np.asarray(x, dtype=np.float64), np.asarray(w, dtype=np.float64)
    B, C, H, W = x.shape
    O, Cg, kh, kw = w.shape
    s, p, d = stride, padding, dilation
    Ho = (H + 2 * p - d * (kh - 1) - 1) // s + 1
    Wo = (W + 2 * p - d * (kw - 1) - 1) // s + 1
    og = O // groups
    out = np.zeros((B, O, Ho, Wo))
    for n in range(B):
        for o in range(O):
            gi = o // og
            for i in range(Ho):
                for j in range(Wo):
                    acc = 0.0 if b is None else float(b[o])
                    for c in range(Cg):
                        for u in range(kh):
                            for v in range(kw):
                                y, xx = i * s - p + u * d, j * s - p + v * d
                                if 0 <= y < H and 0 <= xx < W:
                                    acc += x[n, gi * Cg + c, y, xx] * w[o, c, u, v]
                    out[n, o, i, j] = acc
    return out


def conv_transpose2d_loop(x, w, stride=1, padding=0):
    """Scatter form: every input pixel adds its weighted kernel to the output."""
    x, w = np.asarray(x, dtype=np.float64), np.asarray(w, dtype=np.float64)
    B, C, H, W = x.shape
    _, O, kh, kw = w.shape
    Ho, Wo = (H - 1) * stride - 2 * padding + kh, (W - 1) * stride - 2 * padding + kw
    full = np.zeros((B, O, (H - 1) * stride + kh, (W - 1) * stride + kw))
    for n in range(B):
        for c in range(C):
            for i in range(H):
                for j in range(W):
                    for o in range(O):
                        for u in range(kh):
                            for v in range(kw):
                                full[n, o, i * stride + u, j * stride + v] += x[n, c, i, j] * w[c, o, u, v]
    return full[:, :, padding:padding + Ho, padding:padding + Wo]


# ----------------------------------------------------------------------------- scans

def scan_naive(x, delta, A, B, C, D=None):
    """Literal recurrence; x, delta: b×L×d, A: d×N, B, C: b×L×N."""
    x, delta, A, B, C = (np.asarray(t, dtype=np.float64) for t in (x, delta, A, B, C))
    b, L, d = x.shape
    y = np.zeros_like(x)
    for n in range(b):
        h = np.zeros_like(A)
        for t in range(L):
            h = np.exp(delta[n, t][:, None] * A) * h + (delta[n, t] * x[n, t])[:, None] * B[n, t][None, :]
            y[n, t] = h @ C[n, t]
    if D is not None:
        y = y + np.asarray(D, dtype=np.float64) * x
    return y


def grid_order(h: int, w: int, axis: str, reverse: bool) -> list[tuple[int, int]]:
    """Grid coordinates in visiting order."""
    if axis == "row":
        cells = [(i, j) for i in range(h) for j in range(w)]
    else:
        cells = [(i, j) for j in range(w) for i in range(h)]
    return cells[::-1] if reverse else cells


def ss2d_naive(x, params, orders):
    """x: b×d×h×w numpy; params: list of dicts with grid-row-major per-token tensors."""
    x = np.asarray(x, dtype=np.float64)
    b, d, h, w = x.shape
    out = np.zeros_like(x)
    for prm, (axis, rev) in zip(params, orders):
        cells = grid_order(h, w, axis, rev)
        seq = np.stack([x[:, :, i, j] for i, j in cells], axis=1)
        rm = [i * w + j for i, j in cells]
        y = scan_naive(seq, prm["delta"][:, rm], -np.exp(prm["A_log"]), prm["B"][:, rm], prm["C"][:, rm], prm["D"])
        for t, (i, j) in enumerate(cells):
            out[:, :, i, j] += y[:, t]
    return out


# ----------------------------------------------------------------------------- attention

def mhsa_loop(x, qkv_w, qkv_b, proj_w, proj_b, heads):
    x = np.asarray(x, dtype=np.float64)
    Bn, L, C = x.shape
    hd = C // heads
    qkv = x @ qkv_w.T + (0 if qkv_b is None else qkv_b)
    q, k, v = qkv[..., :C], qkv[..., C:2 * C], qkv[..., 2 * C:]
    out = np.zeros_like(x)
    for n in range(Bn):
        for hh in range(heads):
            sl = slice(hh * hd, (hh + 1) * hd)
            for i in range(L):
                logits = [float(q[n, i, sl] @ k[n, j, sl]) / math.sqrt(hd) for j in range(L)]
                m = max(logits)
                e = [math.exp(t - m) for t in logits]
                z = sum(e)
                out[n, i, sl] = sum((e[j] / z) * v[n, j, sl] for j in range(L))
    return out @ proj_w.T + (0 if proj_b is None else proj_b)


# ----------------------------------------------------------------------------- statistics

def wilcoxon_enumerate(d) -> tuple[float, float]:
    """Two-sided exact p by listing all 2^n sign patterns; zeros dropped, ties mid-ranked."""
    d = [float(v) for v in d if v != 0]
    n = len(d)
    mags = sorted(abs(v) for v in d)
    ranks = []
    for v in d:
        first = mags.index(abs(v))
        last = len(mags) - 1 - mags[::-1].index(abs(v))
        ranks.append((first + last) / 2 + 1)
    w_plus = sum(r for r, v in zip(ranks, d) if v > 0)
    lo = hi = 0
    for signs in itertools.product((0, 1), repeat=n):
        s = sum(r for r, keep in zip(ranks, signs) if keep)
        lo += s <= w_plus + 1e-9
        hi += s >= w_plus - 1e-9
    total = 2 ** n
    return w_plus, min(1.0, 2 * min(lo, hi) / total)


def dice_enumerate(pred, gt, k) -> float:
    p = g = both = 0
    for a, b in zip(np.ravel(pred), np.ravel(gt)):
        p += a == k
        g += b == k
        both += (a == k) and (b == k)
    return 1.0 if p + g == 0 else 2 * both / (p + g)
