from __future__ import annotations

import importlib.util
import sys
from dataclasses import dataclass
from importlib import import_module
from pathlib import Path
from threading import Lock
from typing import Any, Dict, List, Optional, Tuple
from uuid import uuid4

import yaml
from pydantic import BaseModel, Field

from core.errors import InvalidArgument
from core.logging import get_logger
from core.plan.models import BitPlan
from core.plan.planners import compose

from .base import PlanContext, StrategyBlock

_log = get_logger("registry")

ARG_TYPES = ("integer", "number", "layers")
PROJECT_ROOT = Path(__file__).resolve().parents[2]


class StrategyArg(BaseModel):
    name: str
    type: str = "integer"
    description: Optional[str] = None


class BlockSpec(BaseModel):
    """Strategy block declared in YAML.

    ``token`` is the CLI prefix (``freq`` in ``freq:2``); ``args`` are the
    colon-separated values after it, in order. The ``entrypoint`` is either a
    dotted path (``package.module:Class``) or a file path
    (``blocks/strategies/usage.py:FrequencyStrategy``) resolved against the
    project root, or ``core/`` when it starts with ``blocks/``.
    """

    id: str
    version: str
    token: str
    entrypoint: str
    args: List[StrategyArg] = Field(default_factory=list)
    stochastic: bool = False
    requires: List[str] = Field(default_factory=list)
    tags: List[str] | None = None
    description: Optional[str] = None


@dataclass(frozen=True)
class StrategyCall:
    """One parsed token of a strategy list."""

    text: str
    spec: BlockSpec
    args: Dict[str, Any]

    @property
    def stochastic(self) -> bool:
        return self.spec.stochastic


def _parse_value(raw: str, arg: StrategyArg, token: str) -> Any:
    try:
        if arg.type == "integer":
            return int(raw)
        if arg.type == "number":
            return float(raw)
        if arg.type == "layers":
            return [int(p) for p in raw.split("+") if p != ""]
    except ValueError as e:
        raise InvalidArgument.build(
            f"argument '{arg.name}' of strategy '{token}' must be of type {arg.type}, got '{raw}'"
        ) from e
    raise InvalidArgument.build(f"unknown argument type '{arg.type}'", details={"allowed": list(ARG_TYPES)})


class BlockRegistry:
    """Loads strategy specs and instantiates strategy blocks."""

    def __init__(self, project_root: Optional[str | Path] = None, specs_dir: str = "block_specs/strategies") -> None:
        self.project_root: Path = Path(project_root) if project_root else PROJECT_ROOT
        self.specs_dir: Path = self.project_root / specs_dir
        self._specs_by_id: Dict[str, List[BlockSpec]] = {}
        self._id_by_token: Dict[str, str] = {}
        self._classes: Dict[str, type] = {}
        self._lock = Lock()

    @property
    def specs_by_id(self) -> Dict[str, List[BlockSpec]]:
        return self._specs_by_id

    def load_specs(self) -> int:
        """Load all YAML specs under ``specs_dir`` recursively; returns the count."""
        if not self.specs_dir.exists():
            return 0
        count = 0
        for spec_path in sorted(self.specs_dir.rglob("*.yaml")):
            with spec_path.open("r", encoding="utf-8") as f:
                data = yaml.safe_load(f) or {}
            spec = BlockSpec.model_validate(data)
            self.register(spec)
            count += 1
        _log.debug("loaded %d strategy specs from %s", count, self.specs_dir)
        return count

    def register(self, spec: BlockSpec) -> None:
        owner = self._id_by_token.get(spec.token)
        if owner is not None and owner != spec.id:
            raise InvalidArgument.build(f"token '{spec.token}' is declared by both {owner} and {spec.id}")
        self._specs_by_id.setdefault(spec.id, []).append(spec)
        self._id_by_token[spec.token] = spec.id

    def list_block_ids(self) -> List[str]:
        return sorted(self._specs_by_id.keys())

    def list_tokens(self) -> List[str]:
        return sorted(self._id_by_token)

    def _ensure_loaded(self) -> None:
        if not self._specs_by_id:
            self.load_specs()

    def _resolve_spec(self, block_id: str, version: Optional[str] = None) -> BlockSpec:
        self._ensure_loaded()
        specs = self._specs_by_id.get(block_id) or []
        if not specs:
            raise KeyError(f"Block id not found: {block_id}")
        if version:
            for s in specs:
                if s.version == version:
                    return s
            raise KeyError(f"Version {version} not found for block {block_id}")
        try:
            from packaging.version import InvalidVersion, Version

            return sorted(specs, key=lambda s: Version(s.version))[-1]
        except InvalidVersion:
            return specs[-1]

    def get(self, block_id: str, version: Optional[str] = None) -> StrategyBlock:
        """Instantiate a block by id; ``id@version`` picks a specific version."""
        bid, ver = block_id, version
        if "@" in block_id and version is None:
            bid, ver = block_id.split("@", 1)
        spec = self._resolve_spec(bid, ver)
        return self._instantiate(spec)

    def _instantiate(self, spec: BlockSpec) -> StrategyBlock:
        with self._lock:
            cls = self._classes.get(spec.entrypoint)
            if cls is None:
                cls = self._load_class_from_entrypoint(spec.entrypoint)
                self._classes[spec.entrypoint] = cls
        instance = cls()
        if not isinstance(instance, StrategyBlock):
            raise TypeError(f"Loaded class for {spec.id} is not a StrategyBlock: {type(instance)!r}")
        return instance

    def _load_class_from_entrypoint(self, entrypoint: str) -> type:
        module_part, _, class_name = entrypoint.partition(":")
        if not class_name:
            raise ValueError(f"Invalid entrypoint (missing class): {entrypoint}")
        module_part = module_part.strip()
        class_name = class_name.strip()

        normalized = module_part.replace("\\", "/")
        if normalized.endswith(".py") or "/" in normalized:
            candidates = [(self.project_root / normalized).resolve()]
            if normalized.startswith("blocks/"):
                candidates.append((self.project_root / "core" / normalized).resolve())
            for file_path in candidates:
                if not file_path.exists():
                    continue
                mod_name = f"dyn_{uuid4().hex}"
                spec = importlib.util.spec_from_file_location(mod_name, file_path)
                if spec is None or spec.loader is None:
                    continue
                module = importlib.util.module_from_spec(spec)
                sys.modules[mod_name] = module
                spec.loader.exec_module(module)
                try:
                    return getattr(module, class_name)
                except AttributeError as e:
                    raise ImportError(f"Class {class_name!r} not found in module loaded from {file_path}") from e
            raise FileNotFoundError(
                f"Entrypoint file not found for {entrypoint!r}. Tried: {[str(p) for p in candidates]}"
            )

        module = import_module(module_part)
        try:
            return getattr(module, class_name)
        except AttributeError as e:
            raise ImportError(f"Class {class_name!r} not found in module {module_part!r}") from e

    # ------------------ strategy tokens ------------------
    def parse_token(self, text: str) -> StrategyCall:
        """``alpha:0.5:8`` -> StrategyCall(spec of 'alpha', {'alpha': 0.5, 'budget': 8})."""
        self._ensure_loaded()
        token, *raw_args = text.strip().split(":")
        bid = self._id_by_token.get(token)
        if bid is None:
            raise InvalidArgument.build(
                f"unknown strategy '{token}'",
                details={"known": self.list_tokens()},
                hint="see block_specs/strategies for the available strategies",
            )
        spec = self._resolve_spec(bid)
        if len(raw_args) != len(spec.args):
            expected = ":".join([token] + [f"<{a.name}>" for a in spec.args])
            raise InvalidArgument.build(f"strategy '{text}' takes {len(spec.args)} argument(s): {expected}")
        args = {a.name: _parse_value(v, a, token) for a, v in zip(spec.args, raw_args)}
        return StrategyCall(text=text.strip(), spec=spec, args=args)

    def parse_strategies(self, text: str) -> List[StrategyCall]:
        """Comma-separated token list; empty items are ignored."""
        return [self.parse_token(t) for t in text.split(",") if t.strip()]

    def run_call(self, call: StrategyCall, ctx: PlanContext) -> BitPlan:
        block = self._instantiate(call.spec)
        block.validate(call.args)
        plan = block.plan(ctx, call.args)
        return plan.model_copy(update={"provenance": [call.text]})

    def build_plan(self, strategies: str | List[StrategyCall], ctx: PlanContext) -> Tuple[BitPlan, List[StrategyCall]]:
        """Plan of a strategy list: each token planned, then composed in list order (later overrides earlier)."""
        calls = self.parse_strategies(strategies) if isinstance(strategies, str) else list(strategies)
        if not calls:
            raise InvalidArgument.build("empty strategy list")
        plans = [self.run_call(c, ctx) for c in calls]
        return compose(plans, default_bits=ctx.lo_bits), calls


_GLOBAL_REGISTRY: BlockRegistry | None = None


def get_registry() -> BlockRegistry:
    global _GLOBAL_REGISTRY
    if _GLOBAL_REGISTRY is None:
        _GLOBAL_REGISTRY = BlockRegistry()
        _GLOBAL_REGISTRY.load_specs()
    return _GLOBAL_REGISTRY
