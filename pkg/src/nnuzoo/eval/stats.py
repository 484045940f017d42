"""Wilcoxon signed-rank test with an exact small-sample branch."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EXACT_MAX_N = 12


class UndefinedTestError(ValueError):
    """Raised when every paired difference is zero."""


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float  # min(W+, W-)
    pvalue: float
    n: int  # pairs entering the signed ranks
    method: str  # "exact" or "normal"
    w_plus: float
    w_minus: float

    def __iter__(self):
        return iter((self.statistic, self.pvalue))


def average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks of ``x`` with ties sharing their mean rank."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x), dtype=np.float64)
    xs = x[order]
    i = 0
    while i < len(xs):
        j = i
        while j + 1 < len(xs) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def signed_ranks(d, zero_method: str = "wilcox") -> tuple[np.ndarray, np.ndarray]:
    """(ranks of |d|, signs) for the differences that enter the statistic."""
    d = np.asarray(d, dtype=np.float64)
    if zero_method == "wilcox":
        d = d[d != 0]
        r = average_ranks(np.abs(d))
    elif zero_method == "pratt":
        r = average_ranks(np.abs(d))
        keep = d != 0
        d, r = d[keep], r[keep]
    else:
        raise ValueError(f"unknown zero_method {zero_method!r}")
    return r, np.sign(d)


def exact_null_counts(doubled_ranks) -> np.ndarray:
    """counts[s] = number of sign assignments whose doubled W+ equals s."""
    total = int(sum(doubled_ranks))
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled_ranks:
        r = int(r)
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:total + 1 - r]
        counts = counts + shifted
    return counts


def _exact_p(ranks: np.ndarray, w_plus: float) -> float:
    doubled = np.rint(2 * ranks).astype(np.int64)
    counts = exact_null_counts(doubled)
    s = int(round(2 * w_plus))
    total = counts.sum()
    lower = counts[: s + 1].sum() / total
    upper = counts[s:].sum() / total
    return float(min(1.0, 2.0 * min(lower, upper)))


def _normal_p(ranks: np.ndarray, w_plus: float, correction: bool) -> float:
    mean = ranks.sum() / 2.0
    var = (ranks ** 2).sum() / 4.0
    dev = w_plus - mean
    if correction:
        dev = math.copysign(max(abs(dev) - 0.5, 0.0), dev)
    z = dev / math.sqrt(var)
    return float(min(1.0, math.erfc(abs(z) / math.sqrt(2.0))))


def wilcoxon_signed_rank(a, b=None, zero_method: str = "wilcox", exact_max_n: int = EXACT_MAX_N,
                         correction: bool = True, method: str = "auto") -> WilcoxonResult:
    """Two-sided paired test on ``a - b`` (or on ``a`` alone when ``b`` is None).

    ``method="auto"`` is exact for at most ``exact_max_n`` non-zero pairs and
    uses the tie-corrected normal approximation otherwise.
    """
    a = np.asarray(a, dtype=np.float64)
    d = a if b is None else a - np.asarray(b, dtype=np.float64)
    if b is not None and np.shape(a) != np.shape(b):
        raise ValueError(f"paired samples differ in length: {np.shape(a)} vs {np.shape(b)}")
    if d.ndim != 1 or len(d) < 1:
        raise ValueError("need a 1-D sequence of at least one pair")
    if not np.isfinite(d).all():
        raise ValueError("differences must be finite")
    ranks, signs = signed_ranks(d, zero_method)
    n = len(ranks)
    if n == 0:
        raise UndefinedTestError("all paired differences are zero; the signed-rank test is undefined")
    w_plus = float(ranks[signs > 0].sum())
    w_minus = float(ranks[signs < 0].sum())
    if method == "auto":
        method = "exact" if n <= exact_max_n else "normal"
    if method == "exact":
        p = _exact_p(ranks, w_plus)
    elif method == "normal":
        p = _normal_p(ranks, w_plus, correction)
    else:
        raise ValueError(f"unknown method {method!r}")
    return WilcoxonResult(min(w_plus, w_minus), p, n, method, w_plus, w_minus)


def pairwise_wilcoxon(results: dict[str, list[float]], **kw) -> tuple[list[str], np.ndarray]:
    """All-pairs two-sided p-value matrix (diagonal NaN) over equally long per-case score lists."""
    names = list(results)
    m = np.full((len(names), len(names)), np.nan)
    for i, x in enumerate(names):
        for j in range(i + 1, len(names)):
            y = names[j]
            try:
                p = wilcoxon_signed_rank(results[x], results[y], **kw).pvalue
            except UndefinedTestError as e:
                raise UndefinedTestError(f"{x} vs {y}: {e}") from None
            m[i, j] = m[j, i] = p
    return names, m


__all__ = ["EXACT_MAX_N", "UndefinedTestError", "WilcoxonResult", "average_ranks", "exact_null_counts",
           "pairwise_wilcoxon", "signed_ranks", "wilcoxon_signed_rank"]
