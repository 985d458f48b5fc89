"""Perplexity evaluation, strategy comparison and reports."""

from .compare import FULL_PRECISION, EvalReport, ReportRow, StrategySpec, compare
from .perplexity import perplexity, sequence_nll
from .report import parse_report_csv, render_report, save_report
from .suites import Suite, calibration_for, eval_set_for, load_suite, run_suite

__all__ = [
    "FULL_PRECISION",
    "EvalReport",
    "ReportRow",
    "StrategySpec",
    "Suite",
    "calibration_for",
    "compare",
    "eval_set_for",
    "load_suite",
    "parse_report_csv",
    "perplexity",
    "render_report",
    "run_suite",
    "save_report",
    "sequence_nll",
]
