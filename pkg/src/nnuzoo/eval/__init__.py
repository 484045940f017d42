from .bench import TimingRecord, benchmark_model, machine_fingerprint
from .metrics import dice_score, mean_foreground_dice, per_case_dice
from .report import BenchReport, emit_report, read_csv_table
from .stats import UndefinedTestError, WilcoxonResult, pairwise_wilcoxon, wilcoxon_signed_rank

__all__ = ["BenchReport", "TimingRecord", "UndefinedTestError", "WilcoxonResult", "benchmark_model", "dice_score",
           "emit_report", "machine_fingerprint", "mean_foreground_dice", "pairwise_wilcoxon", "per_case_dice",
           "read_csv_table", "wilcoxon_signed_rank"]
