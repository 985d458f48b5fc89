from __future__ import annotations

from pathlib import Path
from typing import List

import pytest

from core.evalharness import parse_report_csv
from core.plan.loader import load_plan, load_score_file
from core.predictor import load_predictor
from headless.cli_runner import build_parser, main

from tests.utils import tiny_spec

pytestmark = pytest.mark.e2e

CALIB = ["--calib-seed", "1", "--calib-seqs", "4", "--calib-len", "16"]
EVAL = ["--eval-seed", "7", "--eval-seqs", "2", "--eval-len", "12"]


@pytest.fixture()
def built(tmp_path: Path) -> Path:
    spec = tmp_path / "spec.txt"
    spec.write_text(tiny_spec().to_text(), encoding="utf-8")
    out = tmp_path / "m.moeq"
    assert main(["build", "--spec", str(spec), "--out", str(out)]) == 0
    return out


def _run(args: List[str]) -> int:
    return main(["--workers", "2"] + args)


def test_profile_plan_quantize_eval(built: Path, tmp_path: Path):
    usage = tmp_path / "usage.txt"
    assert _run(["profile", "--model", str(built), "--out", str(usage)] + CALIB) == 0
    assert usage.read_text(encoding="utf-8").startswith("# usage")

    plan_path = tmp_path / "plan.txt"
    assert _run(["plan", "--model", str(built), "--strategy", "attn,freq:2", "--usage", str(usage), "--out", str(plan_path)]) == 0
    assert load_plan(plan_path).provenance == ["attn", "freq:2"]

    q1, q2 = tmp_path / "a.moeqz", tmp_path / "b.moeqz"
    for q in (q1, q2):
        assert _run(["quantize", "--model", str(built), "--plan", str(plan_path), "--group", "16", "--out", str(q)] + CALIB) == 0
    assert q1.read_bytes() == q2.read_bytes()

    report = tmp_path / "eval.csv"
    assert _run(["eval", "--model", str(q1), "--out", str(report)] + EVAL) == 0
    rows = parse_report_csv(report.read_text(encoding="utf-8")).rows
    assert len(rows) == 1 and rows[0].perplexity >= 1.0
    assert 2.0 < rows[0].avg_bits < 4.0


def test_score_writes_outlier_and_block_scores(built: Path, tmp_path: Path):
    out = tmp_path / "outlier.txt"
    assert _run(["score", "--model", str(built), "--method", "outlier", "--out", str(out)]) == 0
    kind, table = load_score_file(out)
    assert kind == "outlier" and all(v >= 1.0 for v in table.scores.values())

    blocks, bsp = tmp_path / "blocks.txt", tmp_path / "bsp.bin"
    args = ["score", "--model", str(built), "--method", "predictor", "--out", str(blocks), "--save-predictor", str(bsp)]
    assert _run(args + CALIB) == 0
    kind, scores = load_score_file(blocks)
    assert kind == "block" and sorted(scores) == [0, 1]
    assert load_predictor(bsp).layers() == [0, 1]

    plan_path = tmp_path / "plan.txt"
    assert _run(["plan", "--model", str(built), "--strategy", "predicted:1", "--scores", str(blocks), "--out", str(plan_path)]) == 0


def test_compare_writes_markdown(built: Path, tmp_path: Path):
    out = tmp_path / "report.md"
    args = ["compare", "--model", str(built), "--strategies", "fp;attn;random-experts:2", "--seeds", "42,43",
            "--backend", "rtn", "--group", "16", "--out", str(out)]
    assert _run(args + CALIB + EVAL) == 0
    table = [line for line in out.read_text(encoding="utf-8").splitlines() if line.startswith("|")]
    assert len(table) == 2 + 3


def test_invalid_input_exits_with_two(built: Path, tmp_path: Path, capsys):
    assert _run(["plan", "--model", str(built), "--strategy", "alpha:1.5:4", "--out", str(tmp_path / "p.txt")]) == 2
    assert "INVALID_ALPHA" in capsys.readouterr().err
    assert _run(["quantize", "--model", str(built), "--plan", str(tmp_path / "missing.txt"), "--out", str(tmp_path / "q")]) == 2
    assert _run(["eval", "--model", str(tmp_path / "nope.moeq")]) == 2


def test_calibration_flags_parse_in_both_spellings():
    parser = build_parser()
    args = parser.parse_args(
        ["profile", "--model", "m.moeq", "--out", "u.txt", "--calib-seed", "0", "--calib-seqs", "32", "--calib-len", "256"]
    )
    assert (args.calib_seed, args.calib_sequences, args.calib_len) == (0, 32, 256)
    legacy = parser.parse_args(["profile", "--model", "m.moeq", "--out", "u.txt", "--calib-sequences", "8"])
    assert legacy.calib_sequences == 8
    ev = parser.parse_args(["eval", "--model", "q.moeqz", "--eval-seqs", "16"])
    assert ev.eval_sequences == 16


def test_score_epochs_and_hidden_override_config(built: Path, tmp_path: Path):
    blocks, bsp = tmp_path / "blocks.txt", tmp_path / "bsp.bin"
    args = ["score", "--model", str(built), "--method", "predictor", "--epochs", "3", "--hidden", "8",
            "--out", str(blocks), "--save-predictor", str(bsp)]
    assert _run(args + CALIB) == 0
    predictor = load_predictor(bsp)
    assert all(p.hidden == 8 for p in predictor.blocks.values())
    assert all(len(p.log) == 3 for p in predictor.blocks.values())
    bad = ["score", "--model", str(built), "--method", "predictor", "--hidden", "0", "--out", str(blocks)]
    assert _run(bad + CALIB) == 2
