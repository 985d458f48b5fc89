#!/usr/bin/env python3
"""
Headless CLI

- Defaults come from `config/defaults.yaml` (override the directory with MOEQ_CONFIG_DIR)
- Run logs (JSONL) go to `runs/<label>/<timestamp>.jsonl` (MOEQ_RUNS_DIR or --runs-dir)
- Exit codes: 0 success, 2 invalid input, 3 numerical failure, 1 anything else
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

try:
    from dotenv import load_dotenv

    load_dotenv()
except Exception:
    pass

PROJECT_ROOT = Path(__file__).resolve().parents[1]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from core.blocks.base import PlanContext  # noqa: E402
from core.blocks.registry import get_registry  # noqa: E402
from core.calibration import (  # noqa: E402
    CalibrationSet,
    UsageProfile,
    capture_block_io,
    capture_layer_inputs,
    generate_calibration,
    profile_usage,
    render_usage,
)
from core.errors import InvalidArgument, QuantException, exit_code_for  # noqa: E402
from core.evalharness import (  # noqa: E402
    EvalReport,
    ReportRow,
    calibration_for,
    compare,
    eval_set_for,
    load_suite,
    perplexity,
    run_suite,
    save_report,
)
from core.logging import configure_logging, get_logger  # noqa: E402
from core.model import MoEModel, MoEModelSpec, build_model, load_model, save_model  # noqa: E402
from core.plan.config_store import Settings  # noqa: E402
from core.plan.loader import (  # noqa: E402
    load_plan,
    load_score_file,
    render_block_scores,
    render_outlier_scores,
    save_plan,
)
from core.plan.models import BitPlan, Policy  # noqa: E402
from core.plan.planners import average_bits  # noqa: E402
from core.plan.runner import PlanRunner  # noqa: E402
from core.plan.scorers import outlier_scores  # noqa: E402
from core.predictor import (  # noqa: E402
    PredictorConfig,
    predict_block_scores,
    save_predictor,
    spearman,
    train_block_predictor,
)
from core.quant import QuantizedModel, is_quantized_file, load_quantized, save_quantized  # noqa: E402

_log = get_logger("cli")


def _write_text(path: str | Path, text: str) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text, encoding="utf-8")
    return p


def _calibration(args, settings: Settings, model: MoEModel) -> CalibrationSet:
    cs = settings.calibration.model_copy()
    if getattr(args, "calib_seed", None) is not None:
        cs.seed = args.calib_seed
    if getattr(args, "calib_sequences", None) is not None:
        cs.n_sequences = args.calib_sequences
    if getattr(args, "calib_len", None) is not None:
        cs.seq_len = args.calib_len
    return calibration_for(model, cs)


def _eval_set(args, settings: Settings, model: MoEModel) -> CalibrationSet:
    es = settings.eval.model_copy()
    if getattr(args, "eval_seed", None) is not None:
        es.seed = args.eval_seed
    if getattr(args, "eval_source", None):
        es.source = args.eval_source
    if getattr(args, "eval_sequences", None) is not None:
        es.n_sequences = args.eval_sequences
    if getattr(args, "eval_len", None) is not None:
        es.seq_len = args.eval_len
    return eval_set_for(model, es, concentration=settings.calibration.concentration)


def _policy(settings: Settings) -> Policy:
    q = settings.quant
    return Policy(retries=q.damp_retries, damp_growth=q.damp_growth, fallback_to_rtn=q.fallback_to_rtn)


def _load_any(path: str) -> MoEModel | QuantizedModel:
    p = Path(path)
    if not p.exists():
        raise InvalidArgument.build(f"model file not found: {p}")
    return load_quantized(p) if is_quantized_file(p) else load_model(p)


def _load_fp(path: str) -> MoEModel:
    m = _load_any(path)
    if isinstance(m, QuantizedModel):
        raise InvalidArgument.build(f"{path} is a quantized model; this command needs the full-precision model")
    return m


# ------------------ subcommands ------------------
def cmd_build(args, settings: Settings) -> int:
    spec_path = Path(args.spec)
    if not spec_path.exists():
        raise InvalidArgument.build(f"spec file not found: {spec_path}")
    spec = MoEModelSpec.from_text(spec_path.read_text(encoding="utf-8"))
    out = save_model(build_model(spec), args.out)
    print(f"model {spec.spec_hash()[:12]} -> {out}")
    return 0


def cmd_profile(args, settings: Settings) -> int:
    model = _load_fp(args.model)
    calib = _calibration(args, settings, model)
    profile = profile_usage(model, calib, weighting=args.weighting, max_workers=settings.runner.max_workers)
    _write_text(args.out, profile.to_text())
    if args.verbose:
        print(render_usage(profile), end="")
    if args.plot:
        from core.evalharness.figures import plot_usage_heatmap

        plot_usage_heatmap(profile, args.plot)
    print(f"usage of {len(profile.layers())} MoE layers over {profile.tokens} tokens -> {args.out}")
    return 0


def _predictor_config(args, settings: Settings) -> PredictorConfig:
    """Config predictor settings with --epochs / --hidden applied on top."""
    ps = settings.predictor
    hidden = getattr(args, "hidden", None)
    epochs = getattr(args, "epochs", None)
    try:
        return PredictorConfig(
            hidden=ps.hidden if hidden is None else hidden,
            epochs=ps.epochs if epochs is None else epochs,
            lr=ps.lr,
            batch_size=ps.batch_size,
            seed=ps.seed,
            max_workers=settings.runner.max_workers,
        )
    except ValidationError as e:
        raise InvalidArgument.build(
            "invalid predictor settings", details={"errors": [err["msg"] for err in e.errors()]}
        ) from e


def cmd_score(args, settings: Settings) -> int:
    model = _load_fp(args.model)
    if args.method == "outlier":
        _write_text(args.out, render_outlier_scores(outlier_scores(model)))
        print(f"outlier scores -> {args.out}")
        return 0
    ps = settings.predictor
    calib = _calibration(args, settings, model)
    trace = capture_block_io(model, calib, max_workers=settings.runner.max_workers)
    train, held = trace.split(ps.train_fraction)
    bsp = train_block_predictor(train, _predictor_config(args, settings))
    scores = predict_block_scores(bsp, {layer: trace.inputs(layer) for layer in trace.layers()})
    if len(scores) >= 2 and all(held.inputs(layer).shape[0] for layer in held.layers()):
        predicted = predict_block_scores(bsp, {layer: held.inputs(layer) for layer in held.layers()})
        truth = held.mean_cosines()
        layers = sorted(truth)
        rho = spearman([predicted[l] for l in layers], [truth[l] for l in layers])
        _log.info("held-out spearman of block scores: %.3f", rho)
    _write_text(args.out, render_block_scores(scores))
    if args.save_predictor:
        save_predictor(bsp, args.save_predictor)
    print(f"predicted block scores -> {args.out}")
    return 0


def cmd_plan(args, settings: Settings) -> int:
    model = _load_fp(args.model)
    registry = get_registry()
    calls = registry.parse_strategies(args.strategy)
    needs = {r for c in calls for r in c.spec.requires}

    usage: Optional[UsageProfile] = None
    if args.usage:
        usage = UsageProfile.from_text(Path(args.usage).read_text(encoding="utf-8"))
    elif "usage" in needs and args.calib_seed is not None:
        usage = profile_usage(model, _calibration(args, settings, model), max_workers=settings.runner.max_workers)

    ctx = PlanContext(model=model, usage=usage, hi_bits=args.hi, lo_bits=args.lo, seed=args.seed)
    for score_path in args.scores or []:
        kind, value = load_score_file(score_path)
        if kind == "outlier":
            ctx.scores = value
        else:
            ctx.block_scores = value

    plan, _ = registry.build_plan(calls, ctx)
    save_plan(plan, args.out)
    print(f"plan '{args.strategy}': {average_bits(plan, model):.4f} average bits -> {args.out}")
    return 0


def cmd_quantize(args, settings: Settings) -> int:
    model = _load_fp(args.model)
    plan = load_plan(args.plan)
    q = settings.quant
    backend = args.backend or q.backend
    captures = None
    if backend == "gptq":
        captures = capture_layer_inputs(model, _calibration(args, settings, model), max_workers=settings.runner.max_workers)
    runner = PlanRunner(policy=_policy(settings), runs_dir=settings.runner.runs_dir, max_workers=settings.runner.max_workers)
    qm = runner.apply_plan(
        model,
        plan,
        captures,
        backend=backend,
        group_size=args.group or q.group_size,
        damp_ratio=args.damp if args.damp is not None else q.damp_ratio,
        block_size=q.block_size,
    )
    out = save_quantized(qm, args.out)
    print(f"quantized {len(qm.tensors)} weights ({average_bits(plan, model):.4f} average bits) -> {out}")
    if args.verbose and runner.last_log_path:
        print(f"run log: {runner.last_log_path}")
    return 0


def cmd_eval(args, settings: Settings) -> int:
    loaded = _load_any(args.model)
    model = loaded.to_model() if isinstance(loaded, QuantizedModel) else loaded
    reference = _load_fp(args.reference) if args.reference else model
    eval_set = _eval_set(args, settings, reference)
    ppl = perplexity(model, eval_set, max_workers=settings.runner.max_workers)
    if isinstance(loaded, QuantizedModel):
        bits = BitPlan(assignments={str(w): b for w, b in loaded.bits_by_weight().items()})
        avg = average_bits(bits, model)
    else:
        avg = 64.0
    report = EvalReport(
        rows=[ReportRow(strategy=Path(args.model).name, avg_bits=avg, perplexity=ppl, per_seed=[ppl], seeds=[eval_set.seed])],
        spec_hash=model.spec.spec_hash(),
        eval_seed=eval_set.seed,
    )
    if args.out:
        save_report(report, args.out)
    print(f"perplexity {ppl:.6f} at {avg:.4f} average bits")
    return 0


def _split_strategies(values: List[str]) -> List[str]:
    out: List[str] = []
    for v in values:
        out.extend(s.strip() for s in v.split(";") if s.strip())
    return out


def cmd_compare(args, settings: Settings) -> int:
    if args.suite:
        suite = load_suite(args.suite)
        model = _load_fp(args.model) if args.model else None
        report = run_suite(suite, model=model, runs_dir=settings.runner.runs_dir, max_workers=settings.runner.max_workers)
    else:
        if not args.model or not args.strategies:
            raise InvalidArgument.build("compare needs --model and --strategies (or --suite)")
        model = _load_fp(args.model)
        seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else settings.compare.seeds
        q = settings.quant
        report = compare(
            model,
            _split_strategies(args.strategies),
            _calibration(args, settings, model),
            _eval_set(args, settings, model),
            seeds,
            backend=args.backend or q.backend,
            group_size=args.group or q.group_size,
            damp_ratio=q.damp_ratio,
            predictor_config=_predictor_config(args, settings),
            policy=_policy(settings),
            runs_dir=settings.runner.runs_dir,
            max_workers=settings.runner.max_workers,
        )
    save_report(report, args.out)
    if args.plot:
        from core.evalharness.figures import plot_pareto

        plot_pareto(report, args.plot)
    print(f"{len(report.rows)} strategies -> {args.out}")
    return 0


# ------------------ parser ------------------
def _add_calib(p: argparse.ArgumentParser) -> None:
    p.add_argument("--calib-seed", type=int, help="Calibration corpus seed")
    p.add_argument("--calib-seqs", "--calib-sequences", dest="calib_sequences", type=int, help="Number of calibration sequences")
    p.add_argument("--calib-len", type=int, help="Calibration sequence length")


def _add_eval(p: argparse.ArgumentParser) -> None:
    p.add_argument("--eval-seed", type=int, help="Held-out corpus seed")
    p.add_argument("--eval-source", choices=["markov", "model"], help="Synthetic Markov text or model-sampled text")
    p.add_argument("--eval-seqs", "--eval-sequences", dest="eval_sequences", type=int, help="Number of eval sequences")
    p.add_argument("--eval-len", type=int, help="Eval sequence length")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="MoE mixed-precision post-training quantization")
    parser.add_argument("--verbose", "-v", action="store_true", help="Verbose output")
    parser.add_argument("--runs-dir", help="Directory for JSONL run logs (default: runs)")
    parser.add_argument("--workers", type=int, help="Thread pool size")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="Build a random model from a key = value spec file")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("profile", help="Expert usage frequencies on a calibration corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--weighting", choices=["binary", "gate"], default="binary")
    p.add_argument("--plot", help="Write a usage heatmap PNG")
    _add_calib(p)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("score", help="Outlier scores or predicted block scores")
    p.add_argument("--model", required=True)
    p.add_argument("--method", choices=["outlier", "predictor"], default="outlier")
    p.add_argument("--out", required=True)
    p.add_argument("--save-predictor", help="Write the trained predictor container")
    p.add_argument("--epochs", type=int, help="Predictor training epochs (default from config)")
    p.add_argument("--hidden", type=int, help="Predictor hidden width (default from config)")
    _add_calib(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("plan", help="Bit plan from a comma-separated strategy list")
    p.add_argument("--model", required=True)
    p.add_argument("--strategy", required=True, help="e.g. attn,freq:2 (later tokens override earlier ones)")
    p.add_argument("--hi", type=int, default=4)
    p.add_argument("--lo", type=int, default=2)
    p.add_argument("--seed", type=int, default=0, help="Seed of the random baselines")
    p.add_argument("--usage", help="Usage profile written by 'profile'")
    p.add_argument("--scores", action="append", help="Score file written by 'score' (repeatable)")
    p.add_argument("--out", required=True)
    _add_calib(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("quantize", help="Apply a bit plan")
    p.add_argument("--model", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--backend", choices=["rtn", "gptq"])
    p.add_argument("--damp", type=float)
    p.add_argument("--group", type=int)
    p.add_argument("--out", required=True)
    _add_calib(p)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("eval", help="Perplexity of a full-precision or quantized model")
    p.add_argument("--model", required=True)
    p.add_argument("--reference", help="Full-precision model that samples the eval text (--eval-source model)")
    p.add_argument("--out")
    _add_eval(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="Compare strategies; ';' separates strategies, ',' composes tokens")
    p.add_argument("--model")
    p.add_argument("--strategies", action="append", help="e.g. 'fp;attn;freq:2;random-experts:2'")
    p.add_argument("--seeds", help="Comma-separated seeds of the random baselines")
    p.add_argument("--backend", choices=["rtn", "gptq"])
    p.add_argument("--group", type=int)
    p.add_argument("--suite", help="Suite YAML (designs/*.yaml)")
    p.add_argument("--plot", help="Write a Pareto scatter PNG")
    p.add_argument("--out", required=True)
    _add_calib(p)
    _add_eval(p)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(level="DEBUG" if args.verbose else None)
    if args.runs_dir:
        os.environ["MOEQ_RUNS_DIR"] = args.runs_dir
    settings = Settings.from_store()
    if args.workers is not None:
        settings.runner.max_workers = args.workers
    try:
        return int(args.func(args, settings))
    except QuantException as e:
        print(str(e), file=sys.stderr)
        return exit_code_for(e)


if __name__ == "__main__":
    sys.exit(main())
