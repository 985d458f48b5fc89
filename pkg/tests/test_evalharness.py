from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from core.calibration import capture_layer_inputs, generate_calibration, sample_from_model
from core.evalharness import (
    EvalReport,
    ReportRow,
    compare,
    load_suite,
    parse_report_csv,
    perplexity,
    render_report,
    run_suite,
)
from core.errors import InvalidArgument
from core.model import MoEModel, build_model
from core.plan.logger import read_events
from core.plan.planners import average_bits, plan_uniform
from core.plan.runner import apply_plan

from tests.utils import tiny_spec

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture()
def eval_set(model):
    return sample_from_model(model, seed=1000, n_sequences=32, seq_len=48)


def _uniform_logit_model(model: MoEModel) -> MoEModel:
    return MoEModel.from_arrays(model.spec, model.embedding, np.zeros_like(model.head), model.weights)


def test_uniform_logits_give_vocab_size(model, calib):
    flat = _uniform_logit_model(model)
    assert perplexity(flat, calib) == pytest.approx(model.spec.vocab_size, abs=1e-6)


def test_perplexity_is_deterministic_and_worker_independent(model, calib):
    a = perplexity(model, calib, max_workers=1)
    b = perplexity(model, calib, max_workers=4)
    assert a == b
    assert a >= 1.0


def test_single_token_sequences_have_nothing_to_predict(model):
    short = generate_calibration(seed=3, n_sequences=2, seq_len=1, vocab_size=model.spec.vocab_size)
    with pytest.raises(InvalidArgument):
        perplexity(model, short)


def test_eight_bit_model_tracks_full_precision(model, eval_set, tmp_path: Path):
    calib = generate_calibration(seed=1, n_sequences=8, seq_len=32, vocab_size=model.spec.vocab_size)
    captures = capture_layer_inputs(model, calib)
    fp = perplexity(model, eval_set)
    q8 = apply_plan(model, plan_uniform(model, 8), captures, group_size=16, runs_dir=tmp_path)
    q2 = apply_plan(model, plan_uniform(model, 2), captures, group_size=16, runs_dir=tmp_path)
    p8 = perplexity(q8, eval_set)
    p2 = perplexity(q2, eval_set)
    assert abs(p8 - fp) / fp <= 0.02
    assert p2 >= p8


def test_full_precision_row_reports_storage_bits(model, calib, eval_set, tmp_path: Path):
    report = compare(model, ["fp"], calib, eval_set, runs_dir=tmp_path)
    assert len(report.rows) == 1
    row = report.rows[0]
    assert row.avg_bits == 64.0
    assert row.perplexity_std is None
    assert row.perplexity == perplexity(model, eval_set)
    assert report.spec_hash == model.spec.spec_hash()


def test_random_strategies_repeat_over_seeds(model, calib, eval_set, tmp_path: Path):
    report = compare(
        model, ["attn", "random-experts:2"], calib, eval_set, seeds=[42, 43, 44],
        backend="rtn", group_size=16, runs_dir=tmp_path,
    )
    rnd = report.row("random-experts:2")
    assert rnd.seeds == [42, 43, 44] and rnd.runs == 3
    assert rnd.perplexity == pytest.approx(float(np.mean(rnd.per_seed)))
    assert rnd.perplexity_std is not None and rnd.perplexity_std >= 0.0
    det = report.row("attn")
    assert det.runs == 1 and det.perplexity_std is None
    # report values match an independent recount
    for row in report.rows:
        for plan in row.plans:
            assert average_bits(plan, model) == pytest.approx(row.avg_bits, abs=1e-9)
    assert [r.avg_bits for r in report.rows] == sorted(r.avg_bits for r in report.rows)
    logs = sorted((tmp_path / "compare").rglob("*.jsonl"))
    assert len(logs) == 4
    metrics = [e for p in logs for e in read_events(p) if e["type"] == "metric"]
    assert {m["name"] for m in metrics} == {"perplexity", "average_bits"}
    assert sorted(m["value"] for m in metrics if m["name"] == "perplexity") == sorted(det.per_seed + rnd.per_seed)


def test_unknown_strategy_is_rejected(model, calib, eval_set, tmp_path: Path):
    with pytest.raises(InvalidArgument):
        compare(model, ["nope:1"], calib, eval_set, runs_dir=tmp_path)


def _seeded_compare(model, strategies, tmp_path):
    calib = generate_calibration(seed=1, n_sequences=8, seq_len=32, vocab_size=model.spec.vocab_size)
    eval_set = sample_from_model(model, seed=1000, n_sequences=32, seq_len=48)
    return compare(model, strategies, calib, eval_set, seeds=[42, 43, 44], group_size=16, runs_dir=tmp_path)


@pytest.mark.slow
def test_frequent_experts_beat_random_experts_on_skewed_router(tmp_path: Path):
    model = build_model(tiny_spec(router_skew=2.0, seed=13))
    report = _seeded_compare(model, ["attn,freq:2", "attn,random-experts:2"], tmp_path)
    freq, rnd = report.row("attn,freq:2"), report.row("attn,random-experts:2")
    assert freq.avg_bits == pytest.approx(rnd.avg_bits, abs=1e-9)
    assert freq.perplexity <= rnd.perplexity


@pytest.mark.slow
def test_attention_priority_beats_equal_budget_ffnn(tmp_path: Path):
    model = build_model(tiny_spec(seed=17))
    report = _seeded_compare(model, ["attn", "random-ffnn"], tmp_path)
    attn, ffnn = report.row("attn"), report.row("random-ffnn")
    assert attn.avg_bits == pytest.approx(ffnn.avg_bits, abs=1e-9)
    assert attn.perplexity < ffnn.perplexity


@pytest.mark.slow
def test_shared_experts_beat_random_routed_experts(tmp_path: Path):
    model = build_model(tiny_spec(num_shared_experts=2, seed=19))
    report = _seeded_compare(model, ["shared", "random-experts:2"], tmp_path)
    shared, rnd = report.row("shared"), report.row("random-experts:2")
    assert shared.avg_bits == pytest.approx(rnd.avg_bits, abs=1e-9)
    assert shared.perplexity < rnd.perplexity


def _report() -> EvalReport:
    return EvalReport(
        rows=[
            ReportRow(strategy="attn,freq:2", avg_bits=2.25, perplexity=30.123456789, per_seed=[30.123456789], seeds=[42]),
            ReportRow(
                strategy="random-experts:2",
                avg_bits=2.25,
                perplexity=31.0,
                perplexity_std=0.1 + 0.2,
                per_seed=[30.9, 31.1, 31.0],
                seeds=[42, 43, 44],
            ),
        ],
        spec_hash="abc123",
        calib_seed=1,
        eval_seed=1000,
    )


def test_markdown_report_has_one_row_per_strategy():
    text = render_report(_report(), "markdown")
    table = [line for line in text.splitlines() if line.startswith("|")]
    assert len(table) == 2 + 2  # header, separator, rows
    assert render_report(_report(), "markdown") == text


def test_empty_report_renders_header_only():
    md = render_report(EvalReport(), "markdown")
    assert [line for line in md.splitlines() if line.startswith("|")][0].startswith("| strategy")
    assert len([line for line in md.splitlines() if line.startswith("|")]) == 2
    csv = render_report(EvalReport(), "csv")
    assert csv.splitlines()[-1].startswith("strategy,avg_bits")
    assert parse_report_csv(csv).rows == []


def test_csv_round_trips_values():
    report = _report()
    back = parse_report_csv(render_report(report, "csv"))
    assert back.spec_hash == "abc123" and back.calib_seed == 1 and back.eval_seed == 1000
    assert [r.model_dump() for r in back.rows] == [r.model_dump() for r in report.rows]


def test_unknown_format_rejected():
    with pytest.raises(InvalidArgument):
        render_report(_report(), "html")


@pytest.mark.parametrize("name", ["frequency_vs_random", "attention_priority", "shared_experts"])
def test_repository_suites_load(name: str):
    suite = load_suite(ROOT / "designs" / f"{name}.yaml")
    assert suite.strategies[0].is_full_precision
    assert suite.seeds == [42, 43, 44]
    suite.model_spec()


def test_small_suite_runs(tmp_path: Path):
    path = tmp_path / "suite.yaml"
    path.write_text(
        "\n".join(
            [
                "id: tiny",
                "model: {vocab_size: 32, hidden_dim: 16, ffnn_dim: 32, num_layers: 1, num_experts: 4, top_k: 1, seed: 2}",
                "calibration: {seed: 0, n_sequences: 2, seq_len: 8}",
                "eval: {seed: 9, n_sequences: 2, seq_len: 8, source: markov}",
                "quant: {backend: rtn, group_size: 16}",
                "seeds: [1, 2]",
                "strategies:",
                "  - fp",
                "  - {name: all-4, strategies: 'uniform:4'}",
                "  - random-blocks:1",
            ]
        ),
        encoding="utf-8",
    )
    report = run_suite(load_suite(path), runs_dir=tmp_path / "runs")
    assert [r.strategy for r in report.rows] == ["random-blocks:1", "all-4", "fp"]
    assert report.row("random-blocks:1").runs == 2


def test_bad_suite_is_invalid_argument(tmp_path: Path):
    path = tmp_path / "bad.yaml"
    path.write_text("id: x\nstrategies: []\nunknown_key: 1\n", encoding="utf-8")
    with pytest.raises(InvalidArgument):
        load_suite(path)
