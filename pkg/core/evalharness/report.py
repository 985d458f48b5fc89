from __future__ import annotations

import io
from pathlib import Path
from typing import List, Optional

import pandas as pd

from core.errors import InvalidArgument

from .compare import EvalReport, ReportRow

FORMATS = ("markdown", "csv")
CSV_HEADER = "# moeq report v1"


def _metadata(report: EvalReport) -> List[str]:
    return [
        f"spec_hash = {report.spec_hash}",
        f"calib_seed = {'' if report.calib_seed is None else report.calib_seed}",
        f"eval_seed = {'' if report.eval_seed is None else report.eval_seed}",
    ]


def _markdown(report: EvalReport) -> str:
    frame = report.to_frame()
    shown = pd.DataFrame(
        {
            "strategy": frame["strategy"],
            "avg_bits": [f"{v:.4f}" for v in frame["avg_bits"]],
            "perplexity": [f"{v:.4f}" for v in frame["perplexity"]],
            "std": ["" if pd.isna(v) else f"{v:.4f}" for v in frame["perplexity_std"]],
            "runs": [str(v) for v in frame["runs"]],
        },
        columns=["strategy", "avg_bits", "perplexity", "std", "runs"],
    )
    table = shown.to_markdown(index=False, tablefmt="pipe", disable_numparse=True)
    meta = "\n".join(f"- {line}" for line in _metadata(report))
    return f"## Strategy comparison\n\n{meta}\n\n{table}\n"


def _csv(report: EvalReport) -> str:
    lines = [CSV_HEADER] + [f"# {line}" for line in _metadata(report)]
    body = report.to_frame().to_csv(index=False, lineterminator="\n")
    return "\n".join(lines) + "\n" + body


def render_report(report: EvalReport, fmt: str = "markdown") -> str:
    """Deterministic text of a report; csv keeps full float precision."""
    if fmt == "markdown":
        return _markdown(report)
    if fmt == "csv":
        return _csv(report)
    raise InvalidArgument.build(f"unknown report format '{fmt}'", details={"allowed": list(FORMATS)})


def _optional_float(raw: str) -> Optional[float]:
    return None if raw == "" else float(raw)


def parse_report_csv(text: str) -> EvalReport:
    lines = text.splitlines()
    if not lines or lines[0].strip() != CSV_HEADER:
        raise InvalidArgument.build("not a moeq csv report")
    meta = {}
    body_start = 1
    for body_start in range(1, len(lines)):
        line = lines[body_start]
        if not line.startswith("#"):
            break
        key, _, value = line[1:].partition("=")
        meta[key.strip()] = value.strip()
    frame = pd.read_csv(
        io.StringIO("\n".join(lines[body_start:])),
        dtype=str,
        keep_default_na=False,
    )
    rows = [
        ReportRow(
            strategy=rec["strategy"],
            avg_bits=float(rec["avg_bits"]),
            perplexity=float(rec["perplexity"]),
            perplexity_std=_optional_float(rec["perplexity_std"]),
            seeds=[int(s) for s in rec["seeds"].split(";") if s],
            per_seed=[float(v) for v in rec["per_seed"].split(";") if v],
        )
        for rec in frame.to_dict(orient="records")
    ]
    return EvalReport(
        rows=rows,
        spec_hash=meta.get("spec_hash", ""),
        calib_seed=int(meta["calib_seed"]) if meta.get("calib_seed") else None,
        eval_seed=int(meta["eval_seed"]) if meta.get("eval_seed") else None,
    )


def save_report(report: EvalReport, path: str | Path) -> Path:
    """Format follows the extension: ``.csv`` or markdown otherwise."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    fmt = "csv" if p.suffix.lower() == ".csv" else "markdown"
    p.write_text(render_report(report, fmt), encoding="utf-8")
    return p
