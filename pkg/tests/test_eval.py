import math

import numpy as np
import pytest

from nnuzoo.eval import (BenchReport, TimingRecord, UndefinedTestError, benchmark_model, dice_score, emit_report,
                         mean_foreground_dice, pairwise_wilcoxon, per_case_dice, read_csv_table,
                         wilcoxon_signed_rank)
from nnuzoo.eval.stats import average_ranks, exact_null_counts
from nnuzoo.models import ARCHITECTURES, build_model, count_params, preset_config

from oracles import dice_enumerate, wilcoxon_enumerate


# ----------------------------------------------------------------------------- dice

def test_dice_identity():
    m = np.random.default_rng(0).integers(0, 3, (8, 8))
    assert dice_score(m, m, 1) == 1.0


def test_dice_disjoint():
    p, g = np.zeros((4, 4), int), np.zeros((4, 4), int)
    p[0], g[1] = 1, 1
    assert dice_score(p, g, 1) == 0.0


def test_dice_half_overlap():
    p, g = np.zeros((4, 4), int), np.zeros((4, 4), int)
    p[0, :4] = 1
    g[0, 2:4] = g[1, 0:2] = 1
    assert dice_score(p, g, 1) == 0.5


def test_dice_empty_both():
    z = np.zeros((3, 3), int)
    assert dice_score(z, z, 2) == 1.0


def test_dice_matches_enumeration():
    r = np.random.default_rng(1)
    for _ in range(20):
        p, g = r.integers(0, 4, (7, 9)), r.integers(0, 4, (7, 9))
        for k in range(4):
            assert dice_score(p, g, k) == dice_enumerate(p, g, k)


def test_dice_symmetric_and_relabel_invariant():
    r = np.random.default_rng(2)
    p, g = r.integers(0, 3, (10, 10)), r.integers(0, 3, (10, 10))
    assert dice_score(p, g, 1) == dice_score(g, p, 1)
    perm = np.array([2, 0, 1])
    assert dice_score(perm[p], perm[g], perm[1]) == dice_score(p, g, 1)


def test_dice_shape_mismatch():
    with pytest.raises(ValueError):
        dice_score(np.zeros((2, 2)), np.zeros((2, 3)), 1)


def test_mean_dice_over_present_foreground():
    g = np.zeros((4, 4), int)
    g[0] = 1  # class 2 absent from gt
    p = g.copy()
    p[3, 3] = 2  # stray class 2 prediction is not averaged in
    assert mean_foreground_dice(p, g, 3) == 1.0
    assert mean_foreground_dice(np.zeros_like(g), g, 3) == 0.0
    assert mean_foreground_dice(g, g, 3, include_background=True) == 1.0


def test_mean_dice_all_background():
    z = np.zeros((4, 4), int)
    assert mean_foreground_dice(z, z, 3) == 1.0
    p = z.copy()
    p[0, 0] = 1
    assert mean_foreground_dice(p, z, 3) == 0.0


def test_dice_skips_ignore():
    g = np.ones((2, 2), int)
    g[0, 0] = 65535
    p = np.ones((2, 2), int)
    p[0, 0] = 0
    assert dice_score(p, g, 1) == 1.0
    assert per_case_dice(p[None], g[None], 2) == [1.0]


# ----------------------------------------------------------------------------- wilcoxon

def test_average_ranks_ties():
    assert average_ranks(np.array([3.0, 1.0, 3.0, 2.0])).tolist() == [3.5, 1.0, 3.5, 2.0]


def test_all_positive_n5():
    res = wilcoxon_signed_rank([1.0, 2.0, 3.0, 4.0, 5.0])
    assert res.w_minus == 0 and res.w_plus == 15 and res.pvalue == 0.0625 and res.method == "exact"


def test_identical_samples_undefined():
    with pytest.raises(UndefinedTestError):
        wilcoxon_signed_rank([0.5, 0.7], [0.5, 0.7])


def test_null_counts_n3():
    # sign patterns of ranks 1,2,3 give sums 0,1,2,3,3,4,5,6
    counts = exact_null_counts(np.array([2, 4, 6]))
    assert counts[::2].tolist() == [1, 1, 1, 2, 1, 1, 1]


@pytest.mark.parametrize("n", range(1, 13))
def test_exact_branch_matches_enumeration(n):
    r = np.random.default_rng(100 + n)
    for case in range(100 // 12 + 1):
        # rounding creates ties; occasional exact zeros are dropped
        d = np.round(r.normal(size=n) * 3) / 2
        if not d.any():
            continue
        res = wilcoxon_signed_rank(d)
        w_plus, p = wilcoxon_enumerate(d)
        assert res.w_plus == w_plus
        assert res.pvalue == p


def test_normal_branch_formula():
    r = np.random.default_rng(5)
    d = r.normal(size=25)
    res = wilcoxon_signed_rank(d)
    ranks = average_ranks(np.abs(d))
    w = ranks[d > 0].sum()
    z = (abs(w - ranks.sum() / 2) - 0.5) / math.sqrt((ranks ** 2).sum() / 4)
    assert res.method == "normal" and abs(res.pvalue - math.erfc(z / math.sqrt(2))) < 1e-15


def test_normal_close_to_exact_at_n20():
    # whole support of the untied statistic, exact side via full enumeration
    ranks = np.arange(1, 21)
    sums = np.zeros(1, dtype=np.int64)
    for rk in ranks:
        sums = np.concatenate([sums, sums + rk])
    sums.sort()
    total = len(sums)
    for w in range(0, 211, 7):
        lo = np.searchsorted(sums, w, side="right")
        hi = total - np.searchsorted(sums, w, side="left")
        exact = min(1.0, 2 * min(lo, hi) / total)
        d = np.where(np.isin(np.arange(1, 21), _subset_with_sum(w, 20)), 1.0, -1.0) * ranks
        assert abs(wilcoxon_signed_rank(d, method="normal").pvalue - exact) < 0.01


def _subset_with_sum(w, n):
    out = []
    for k in range(n, 0, -1):
        if k <= w:
            out.append(k)
            w -= k
    return out


def test_pvalue_invariances():
    r = np.random.default_rng(7)
    a, b = r.normal(size=10), r.normal(size=10)
    base = wilcoxon_signed_rank(a, b).pvalue
    assert wilcoxon_signed_rank(a + 3.0, b + 3.0).pvalue == base
    assert wilcoxon_signed_rank(a * 2.5, b * 2.5).pvalue == base


def test_zero_methods():
    d = [0.0, 1.0, 2.0, -3.0, 4.0]
    assert wilcoxon_signed_rank(d).n == 4
    assert wilcoxon_signed_rank(d, zero_method="pratt").n == 4
    assert wilcoxon_signed_rank(d, zero_method="pratt").w_plus == 2 + 3 + 5


def test_wilcoxon_input_errors():
    with pytest.raises(ValueError):
        wilcoxon_signed_rank([1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        wilcoxon_signed_rank([])


def test_pairwise_matrix():
    names, m = pairwise_wilcoxon({"a": [0.1, 0.2, 0.3, 0.4], "b": [0.2, 0.4, 0.1, 0.9], "c": [0.5, 0.5, 0.5, 0.5]})
    assert names == ["a", "b", "c"] and np.isnan(np.diag(m)).all() and np.allclose(m, m.T, equal_nan=True)
    with pytest.raises(UndefinedTestError, match="a vs b"):
        pairwise_wilcoxon({"a": [0.1, 0.2], "b": [0.1, 0.2]})


# ----------------------------------------------------------------------------- bench and reports

def test_benchmark_record():
    cfg = preset_config("U2NetS", "SynthShapes", tiny=True)
    rec = benchmark_model("U2NetS", cfg, reps=3, warmup=1, batch_size=2)
    assert len(rec.forward_ms) == 3 and len(rec.step_ms) == 3
    assert min(rec.forward_ms) > 0 and min(rec.step_ms) > 0
    assert rec.fingerprint["threads"] >= 1 and rec.fingerprint["dtype"] == "float32"
    with pytest.raises(ValueError):
        benchmark_model("U2NetS", cfg, reps=2)


def test_repeat_benchmarks_overlap():
    cfg = preset_config("U2NetS", "SynthShapes", tiny=True)
    a, b = (benchmark_model("U2NetS", cfg, reps=7, warmup=2, batch_size=2) for _ in range(2))
    (a_lo, a_hi), (b_lo, b_hi) = a.step_quartiles, b.step_quartiles
    # loose stability smoke check: the two interquartile ranges, widened by 25%, intersect
    pad = 0.25 * max(a.step_median, b.step_median)
    assert a_lo - pad <= b_hi + pad and b_lo - pad <= a_hi + pad


@pytest.fixture
def reports():
    out = []
    for arch in ARCHITECTURES:
        n = count_params(build_model(arch, preset_config(arch, "AbdomenCT"), device="meta"))
        out.append(BenchReport(arch, "AbdomenCT", n, dice=[0.5, 0.75]))
    return out


def test_params_table_rows(tmp_path, reports):
    emit_report(reports, tmp_path)
    header, rows = read_csv_table(tmp_path / "params.csv")
    assert header == ["architecture", "AbdomenCT"] and len(rows) == 15
    assert [r[0] for r in rows] == list(ARCHITECTURES)
    assert [int(r[1]) for r in rows] == [r.param_count for r in reports]
    _, drows = read_csv_table(tmp_path / "dice.csv")
    assert all(float(r[1]) == 0.625 for r in drows)


def test_markdown_shows_million_scale(tmp_path, reports):
    emit_report(reports, tmp_path, formats=("markdown",))
    row = next(l for l in (tmp_path / "params.md").read_text().splitlines() if l.startswith("| U2NetS "))
    assert "1.18M" in row and "vs 1.10" in row


def test_pvalue_table_round_trip(tmp_path, reports):
    names, m = pairwise_wilcoxon({"x": [0.1, 0.3, 0.2], "y": [0.4, 0.5, 0.6]})
    emit_report(reports[:1], tmp_path, formats=("csv",), pvalues=(names, m))
    header, rows = read_csv_table(tmp_path / "pvalues.csv")
    assert header == ["architecture", "x", "y"] and rows[0][1] == "" and float(rows[0][2]) == m[0, 1]


def test_timing_table(tmp_path):
    t = TimingRecord("U2NetS", "SynthShapes", 2, (64, 64), 10, 3, 1, [1.0, 2.0, 3.0], [4.0, 5.0, 6.0],
                     {"threads": 1, "dtype": "float32"})
    emit_report([BenchReport("U2NetS", "SynthShapes", 10, t)], tmp_path, formats=("csv",))
    header, rows = read_csv_table(tmp_path / "timing.csv")
    row = dict(zip(header, rows[0]))
    assert float(row["step_ms_median"]) == 5.0 and float(row["forward_ms_median"]) == 2.0


def test_report_errors(tmp_path):
    with pytest.raises(ValueError):
        emit_report([], tmp_path)
    with pytest.raises(ValueError):
        BenchReport("U2Net", "CAMUS", 1, dice=[1.5])
