from __future__ import annotations

from typing import List

from core.errors import InvalidPlan
from core.model.weights import MoEModel, WeightId
from core.quant.codec import SUPPORTED_BITS

from .models import BitPlan


def validate_plan(plan: BitPlan, model: MoEModel) -> List[str]:
    errors: List[str] = []

    # 1) Widths
    if plan.default_bits not in SUPPORTED_BITS:
        errors.append(f"default_bits {plan.default_bits} is not one of {list(SUPPORTED_BITS)}")

    # 2) Assigned ids exist, are quantizable and carry a supported width
    known = set(model.weight_ids())
    for key, bits in sorted(plan.assignments.items()):
        try:
            wid = WeightId.parse(key)
        except Exception:  # noqa: BLE001
            errors.append(f"Malformed weight id: {key}")
            continue
        if wid not in known:
            errors.append(f"Unknown weight: {key}")
        elif wid.kind == "router":
            errors.append(f"Router weights stay full precision: {key}")
        if bits not in SUPPORTED_BITS:
            errors.append(f"Unsupported bit width {bits} for {key}")
    return errors


def ensure_valid_plan(plan: BitPlan, model: MoEModel) -> BitPlan:
    errors = validate_plan(plan, model)
    if errors:
        raise InvalidPlan.build(
            f"plan is not valid for this model ({len(errors)} problem(s))",
            details={"errors": errors[:20]},
            hint="regenerate the plan for this model spec",
        )
    return plan
