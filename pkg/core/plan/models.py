from __future__ import annotations

from typing import Dict, Iterable, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field

from core.model.weights import WeightId


class Policy(BaseModel):
    """How the runner reacts to per-weight failures."""

    model_config = ConfigDict(populate_by_name=True)

    on_error: str = Field(default="retry")  # halt|retry
    retries: int = 2
    damp_growth: float = 10.0
    fallback_to_rtn: bool = True
    max_workers: Optional[int] = None


class BitPlan(BaseModel):
    """Bit width per WeightId (keyed by its string form).

    Quantizable weights without an explicit assignment use ``default_bits``.
    ``provenance`` lists the planners that produced the assignments, in
    application order.
    """

    model_config = ConfigDict(populate_by_name=True)

    assignments: Dict[str, int] = Field(default_factory=dict)
    default_bits: int = 2
    provenance: List[str] = Field(default_factory=list)

    @classmethod
    def from_ids(
        cls,
        ids: Iterable[WeightId],
        bits: int,
        *,
        name: str,
        default_bits: int = 2,
    ) -> "BitPlan":
        return cls(assignments={str(w): int(bits) for w in ids}, default_bits=default_bits, provenance=[name])

    def bits_for(self, wid: WeightId | str) -> int:
        return self.assignments.get(str(wid), self.default_bits)

    def assigned_ids(self) -> List[WeightId]:
        return sorted(WeightId.parse(k) for k in self.assignments)

    def sorted_items(self) -> List[Tuple[WeightId, int]]:
        return [(wid, self.assignments[str(wid)]) for wid in self.assigned_ids()]

    def with_default(self, default_bits: int) -> "BitPlan":
        return self.model_copy(update={"default_bits": int(default_bits)})

    def ids_at(self, bits: int) -> List[WeightId]:
        return [wid for wid, b in self.sorted_items() if b == bits]


class OutlierScoreTable(BaseModel):
    """Outlier score (>= 1) of every routed/shared expert projection."""

    model_config = ConfigDict(populate_by_name=True)

    scores: Dict[str, float] = Field(default_factory=dict)

    def score(self, wid: WeightId | str) -> float:
        return self.scores[str(wid)]

    def ranking(self) -> List[WeightId]:
        """Highest score first; ties in WeightId order."""
        ids = [WeightId.parse(k) for k in self.scores]
        return sorted(ids, key=lambda w: (-self.scores[str(w)], w.sort_key()))


class ParetoPoint(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    avg_bits: float
    metric: float
    label: str = ""
    plan: Optional[BitPlan] = None
