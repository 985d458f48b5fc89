from __future__ import annotations

import numpy as np
import pandas as pd

from core.errors import InvalidArgument
from core.model.weights import MoEModel

from .models import OutlierScoreTable


def outlier_score(w: np.ndarray) -> float:
    """Max over columns of max|w[:, j]| / mean|w[:, j]|; an all-zero column scores 1."""
    a = np.abs(np.asarray(w, dtype=np.float64))
    if a.ndim != 2 or a.size == 0:
        raise InvalidArgument.build("outlier_score needs a non-empty matrix", details={"shape": list(a.shape)})
    col_max = a.max(axis=0)
    col_mean = a.mean(axis=0)
    ratios = np.where(col_mean > 0, col_max / np.where(col_mean > 0, col_mean, 1.0), 1.0)
    return float(ratios.max())


def outlier_scores(model: MoEModel) -> OutlierScoreTable:
    return OutlierScoreTable(scores={str(wid): outlier_score(model.weights[wid]) for wid in model.ffn_ids()})


def projection_summary(table: OutlierScoreTable) -> pd.DataFrame:
    """Outlier scores per layer and projection (gate/up/down) for reports and plots."""
    rows = []
    for key, score in table.scores.items():
        layer, kind, *rest = key.split(".")
        rows.append({"layer": int(layer[1:]), "kind": kind, "projection": rest[-1], "score": score})
    if not rows:
        return pd.DataFrame(columns=["layer", "kind", "projection", "mean", "max", "count"])
    df = pd.DataFrame(rows)
    out = (
        df.groupby(["layer", "kind", "projection"], sort=True)["score"]
        .agg(["mean", "max", "count"])
        .reset_index()
    )
    return out
