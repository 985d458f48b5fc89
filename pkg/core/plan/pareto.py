from __future__ import annotations

from typing import List, Sequence

from .models import ParetoPoint


def dominates(a: ParetoPoint, b: ParetoPoint) -> bool:
    """True when a is at least as cheap and as good as b, and strictly better in one.

    Lower metric (perplexity) is better.
    """
    return (a.avg_bits <= b.avg_bits and a.metric < b.metric) or (a.avg_bits < b.avg_bits and a.metric <= b.metric)


def pareto_frontier(points: Sequence[ParetoPoint]) -> List[ParetoPoint]:
    """Non-dominated points sorted by avg_bits (then metric, then input order)."""
    front = [p for p in points if not any(dominates(q, p) for q in points if q is not p)]
    order = {id(p): i for i, p in enumerate(points)}
    return sorted(front, key=lambda p: (p.avg_bits, p.metric, order[id(p)]))
