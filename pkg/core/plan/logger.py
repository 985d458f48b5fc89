from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from threading import Lock
from typing import Any, Dict, Optional

UTC = timezone.utc

_RUN_LOG_PATHS_LOCK = Lock()
_RUN_LOG_PATHS: dict[str, "_RunLogInfo"] = {}

SCHEMA_VERSION = "v1"


@dataclass
class _RunLogInfo:
    label: str
    path: Path
    parent_run_id: Optional[str] = None
    # Per-log-file lock; quantization workers append concurrently
    lock: Lock = field(default_factory=Lock)
    seq: int = 0


def register_log_path(run_id: str, label: str, path: Path, parent_run_id: Optional[str] = None) -> None:
    """Register the JSONL event file of a run so ``write_event`` can append to it by run_id."""
    with _RUN_LOG_PATHS_LOCK:
        _RUN_LOG_PATHS[run_id] = _RunLogInfo(label=label, path=path, parent_run_id=parent_run_id)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.touch(exist_ok=True)
    except OSError:
        pass


def _lookup(run_id: str) -> Optional[_RunLogInfo]:
    with _RUN_LOG_PATHS_LOCK:
        return _RUN_LOG_PATHS.get(run_id)


def _now_iso() -> str:
    return datetime.now(UTC).isoformat()


def _default(o: Any) -> Any:
    # numpy scalars and arrays
    if hasattr(o, "tolist"):
        return o.tolist()
    return str(o)


def write_event(run_id: str, event: Dict[str, Any]) -> None:
    """Append one JSON event to the run's JSONL file.

    Adds seq, ts, plan (the run label), run_id, parent_run_id and schema.
    Unknown run ids are ignored.
    """
    info = _lookup(run_id)
    if info is None:
        return
    info.path.parent.mkdir(parents=True, exist_ok=True)
    with info.lock:
        ev = dict(event)
        info.seq += 1
        ev["seq"] = info.seq
        ev["ts"] = _now_iso()
        ev["plan"] = info.label
        ev["run_id"] = run_id
        ev["parent_run_id"] = info.parent_run_id
        ev["schema"] = SCHEMA_VERSION
        line = json.dumps(ev, ensure_ascii=False, default=_default) + "\n"
        with info.path.open("a", encoding="utf-8") as f:
            f.write(line)


def log_metric(
    name: str,
    value: Any,
    *,
    run_id: Optional[str],
    weight: Optional[str] = None,
    tags: Optional[Dict[str, Any]] = None,
) -> None:
    """Record a metric event, e.g. ``log_metric("recon_error", 0.12, run_id=rid, weight="L1.expert.0.up")``."""
    if not isinstance(run_id, str) or not run_id:
        return
    event: Dict[str, Any] = {"type": "metric", "name": name, "value": value, "tags": tags or {}, "level": "info"}
    if weight:
        event["weight"] = weight
    write_event(run_id, event)


def get_log_path_for_run(run_id: str) -> Optional[Path]:
    """JSONL path of a run registered in this process, else None."""
    info = _lookup(run_id)
    return info.path if info else None


def read_events(path: str | Path) -> list[Dict[str, Any]]:
    p = Path(path)
    if not p.exists():
        return []
    return [json.loads(line) for line in p.read_text(encoding="utf-8").splitlines() if line.strip()]
