from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Mapping, Tuple

from core.errors import InvalidArgument, InvalidPlan
from core.model.weights import WeightId

from .models import BitPlan, OutlierScoreTable

HEADER = "# moeq bit plan v1"
OUTLIER_HEADER = "# moeq outlier scores v1"
BLOCK_HEADER = "# moeq block scores v1"


def render_plan(plan: BitPlan) -> str:
    """Canonical text: header, ``default_bits``, ``provenance``, then ``<WeightId> <bits>`` in WeightId order."""
    lines = [
        HEADER,
        f"default_bits = {plan.default_bits}",
        f"provenance = {','.join(plan.provenance)}",
    ]
    lines.extend(f"{wid} {bits}" for wid, bits in plan.sorted_items())
    return "\n".join(lines) + "\n"


def parse_plan(text: str, *, source: str = "<text>") -> BitPlan:
    default_bits = None
    provenance: List[str] = []
    assignments: Dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" in line:
            key, _, value = (part.strip() for part in line.partition("="))
            if key == "default_bits":
                try:
                    default_bits = int(value)
                except ValueError as e:
                    raise InvalidPlan.build(f"{source}:{lineno}: default_bits is not an integer") from e
            elif key == "provenance":
                provenance = [p for p in value.split(",") if p]
            else:
                raise InvalidPlan.build(f"{source}:{lineno}: unknown header '{key}'")
            continue
        parts = line.split()
        if len(parts) != 2:
            raise InvalidPlan.build(f"{source}:{lineno}: expected '<WeightId> <bits>'", details={"line": raw})
        try:
            wid = WeightId.parse(parts[0])
            bits = int(parts[1])
        except Exception as e:  # noqa: BLE001
            raise InvalidPlan.build(f"{source}:{lineno}: {e}", details={"line": raw}) from e
        if str(wid) in assignments:
            raise InvalidPlan.build(f"{source}:{lineno}: duplicate assignment for {wid}")
        assignments[str(wid)] = bits
    if default_bits is None:
        raise InvalidPlan.build(f"{source}: missing 'default_bits' header")
    return BitPlan(assignments=assignments, default_bits=default_bits, provenance=provenance)


def save_plan(plan: BitPlan, path: str | Path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(render_plan(plan), encoding="utf-8")
    return p


def load_plan(path: str | Path) -> BitPlan:
    """Load a plan file written by ``save_plan``."""
    file_path = Path(path)
    if not file_path.exists():
        raise InvalidPlan.build(f"plan file not found: {file_path}")
    return parse_plan(file_path.read_text(encoding="utf-8"), source=str(file_path))


# ------------------ score files ------------------
def render_outlier_scores(table: OutlierScoreTable) -> str:
    lines = [OUTLIER_HEADER]
    lines.extend(f"{WeightId.parse(k)} {table.scores[k]!r}" for k in sorted(table.scores, key=lambda k: WeightId.parse(k)))
    return "\n".join(lines) + "\n"


def render_block_scores(scores: Mapping[int, float]) -> str:
    lines = [BLOCK_HEADER]
    lines.extend(f"{layer} {float(scores[layer])!r}" for layer in sorted(scores))
    return "\n".join(lines) + "\n"


def parse_score_file(text: str, *, source: str = "<text>") -> Tuple[str, OutlierScoreTable | Dict[int, float]]:
    """Returns ("outlier", table) or ("block", {layer: score}) depending on the header."""
    lines = text.splitlines()
    kind = {OUTLIER_HEADER: "outlier", BLOCK_HEADER: "block"}.get(lines[0].strip() if lines else "")
    if kind is None:
        raise InvalidArgument.build(f"{source}: not a moeq score file")
    values: Dict[str, float] = {}
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        try:
            key = str(WeightId.parse(parts[0])) if kind == "outlier" else str(int(parts[0]))
            values[key] = float(parts[1])
        except Exception as e:  # noqa: BLE001
            raise InvalidArgument.build(f"{source}:{lineno}: malformed score line", details={"line": raw}) from e
    if kind == "outlier":
        return kind, OutlierScoreTable(scores=values)
    return kind, {int(k): v for k, v in values.items()}


def load_score_file(path: str | Path) -> Tuple[str, OutlierScoreTable | Dict[int, float]]:
    p = Path(path)
    if not p.exists():
        raise InvalidArgument.build(f"score file not found: {p}")
    return parse_score_file(p.read_text(encoding="utf-8"), source=str(p))
