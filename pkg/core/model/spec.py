from __future__ import annotations

import hashlib
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from typing import Any, Dict

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from core.errors import InvalidSpec


class MoEModelSpec(BaseModel):
    """Shape and seed of a desk-scale MoE decoder.

    ``router_skew`` is a full-precision logit offset added to expert 0 of
    every router; a positive value builds a model with imbalanced routing.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    vocab_size: int = Field(description="Number of token ids")
    hidden_dim: int = Field(description="Residual stream width d")
    ffnn_dim: int = Field(description="Intermediate width of every expert FFNN")
    num_layers: int
    num_experts: int
    top_k: int
    num_shared_experts: int = 0
    first_layer_dense: bool = False
    seed: int = 0
    router_skew: float = 0.0

    def check(self) -> "MoEModelSpec":
        """Raise InvalidSpec when a shape invariant is violated."""
        problems = []
        for name in ("vocab_size", "hidden_dim", "ffnn_dim", "num_layers", "num_experts"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        if self.num_shared_experts < 0:
            problems.append("num_shared_experts must be >= 0")
        if not 1 <= self.top_k <= max(self.num_experts, 0):
            problems.append(f"top_k must satisfy 1 <= top_k <= num_experts ({self.top_k} vs {self.num_experts})")
        if not 0 <= self.seed < 2**64:
            problems.append("seed must be a 64-bit unsigned integer")
        if problems:
            raise InvalidSpec.build(
                "invalid model spec: " + "; ".join(problems),
                details={"problems": problems},
                input_snapshot=self.model_dump(),
            )
        return self

    def is_moe_layer(self, layer: int) -> bool:
        return not (self.first_layer_dense and layer == 0)

    def moe_layers(self) -> list[int]:
        return [layer for layer in range(self.num_layers) if self.is_moe_layer(layer)]

    def to_text(self) -> str:
        """Canonical ``key = value`` text, one field per line in declaration order."""
        lines = []
        for name in type(self).model_fields:
            value = getattr(self, name)
            if isinstance(value, bool):
                rendered = "true" if value else "false"
            elif isinstance(value, float):
                rendered = repr(value)
            else:
                rendered = str(value)
            lines.append(f"{name} = {rendered}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MoEModelSpec":
        try:
            data: Dict[str, Any] = tomllib.loads(text)
        except tomllib.TOMLDecodeError as e:
            raise InvalidSpec.build(f"spec text is not valid key = value text: {e}") from e
        return cls.from_mapping(data)

    @classmethod
    def from_mapping(cls, data: Dict[str, Any]) -> "MoEModelSpec":
        try:
            spec = cls(**data)
        except ValidationError as e:
            raise InvalidSpec.build(
                "invalid model spec fields",
                details={"errors": [err["msg"] for err in e.errors()]},
                input_snapshot=dict(data),
            ) from e
        return spec.check()

    def spec_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()
